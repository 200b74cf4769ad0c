#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vtg/decoder.hpp"
#include "vtg/metrics.hpp"
#include "vtg/tensor.hpp"

namespace vtg {

// One pooled representation per video.
struct ReprSet {
    std::vector<std::vector<double>> vectors;   // n rows, equal dim
    std::string source;                         // label for reports

    std::size_t size() const { return vectors.size(); }
    std::size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }
    void validate() const;   // equal finite rows; ValueError otherwise
};

// Arithmetic mean over the T*N token vectors of a hidden state [T, N, D].
std::vector<double> pool_video_repr(const Tensor& hidden);

struct Mmd2Result {
    double value = 0.0;       // max(raw, 0)
    double raw = 0.0;         // signed estimate
    double bandwidth = 0.0;   // RBF sigma from the median heuristic
    bool bandwidth_fallback = false;   // all pooled points identical
    std::size_t n_x = 0, n_y = 0;
};

// Unbiased (diagonal-excluded) MMD^2 with a Gaussian RBF kernel,
// k(a,b) = exp(-|a-b|^2 / (2 sigma^2)), sigma = median pairwise distance over
// the pooled x+y set.  Requires n_x, n_y >= 2.
Mmd2Result mmd2(const ReprSet& x, const ReprSet& y);
// Biased (diagonal-included) variant; zero for identical sets.
Mmd2Result mmd2_biased(const ReprSet& x, const ReprSet& y);

struct SimrankSplit {
    std::vector<std::size_t> top;      // test ids most similar to training
    std::vector<std::size_t> bottom;   // least similar
    std::vector<double> scores;        // per test sample: max cosine to train
};

// Per test sample, score = max cosine similarity to any training vector; the
// highest- and lowest-scoring `fraction` of ids form the two (disjoint) sets.
// Ties break toward the lower sample id.
SimrankSplit simrank_split(const ReprSet& train, const ReprSet& test, double fraction);

struct PerturbSpec {
    enum class Mode { gt_window, random_window };
    Mode mode = Mode::gt_window;
    double noise_scale = 1.0;   // multiple of the per-dimension feature std
    std::uint64_t seed = 0;
    double tau = 0.7;           // recall threshold for the reported metric
};

struct PerturbResult {
    double clean = 0.0;        // R1@tau before perturbation
    double perturbed = 0.0;    // after
    double drop = 0.0;         // (clean - perturbed) / clean; 0 when clean is 0
    bool overlap_warning = false;   // random window forced onto the GT span
};

using PredictFn = std::function<Prediction(const VideoSample&)>;

// Adds i.i.d. Gaussian noise (per-dimension std scaled by noise_scale) to all
// visual tokens of the frames inside the chosen window.  Random mode picks a
// GT-length window that avoids the GT span when feasible.
VideoSample perturb_sample(const VideoSample& s, const PerturbSpec& spec, bool* overlap_warning);

PerturbResult perturb_eval(const PredictFn& model, const std::vector<VideoSample>& samples,
                           const PerturbSpec& spec);

} // namespace vtg

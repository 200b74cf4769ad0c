#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include "vtg/metrics.hpp"
#include "vtg/rng.hpp"
#include "vtg/tensor.hpp"

namespace vtg {

// Fixed affine feature transform for OOD analogues: an orthogonal rotation
// preserves within-video affinity structure while the bias shifts marginals.
struct DomainShift {
    bool enabled = false;
    double bias_scale = 1.0;   // constant added to every feature dimension
    bool rotate = true;
    bool operator==(const DomainShift&) const = default;
};

struct SynthSpec {
    std::uint64_t seed = 0;
    std::size_t t_frames = 20;
    std::size_t n_tokens = 64;     // spatial grid, 8x8 by default
    std::size_t n_entities = 4;    // entities present per video (incl. target)
    std::size_t feat_dim = 16;
    double separation = 3.0;       // centroid std relative to unit token noise
    double frame_dt = 0.5;         // seconds between frames
    DomainShift shift;

    void validate() const;
    bool operator==(const SynthSpec&) const = default;
};

// One synthetic "video": each frame partitions the token grid into contiguous
// blocks, one per present entity; the queried target entity exists only
// inside the ground-truth window.
struct SynthVideo {
    std::size_t sample_id = 0;
    Tensor frames;               // [T, N, feat_dim]
    std::vector<double> times;   // size T, strictly increasing
    int target_entity = 0;       // global pool id == query word index
    Window gt_window;
    std::vector<int> labels;     // T*N planted entity ids (global pool ids)
};

// Pure function of (spec, stream, index): the same arguments always produce
// identical bytes.  The entity prototype pool and any domain shift derive
// from spec.seed alone, so they are shared across a dataset.
SynthVideo gen_video(const SynthSpec& spec, std::string_view stream = "video", std::uint64_t index = 0);

// Train/eval lists drawn from disjoint streams of spec.seed.  With ood=true
// the spec's domain shift is applied to every returned video's features.
std::pair<std::vector<SynthVideo>, std::vector<SynthVideo>> gen_dataset(const SynthSpec& spec,
                                                                        std::size_t n_train,
                                                                        std::size_t n_eval, bool ood);

// The {-1, +1} block affinity induced by planted labels: [T, N, N].
Tensor label_affinity(const std::vector<int>& labels, std::size_t t, std::size_t n);

// Argmax over the slot axis per token; ties take the lowest slot index.
std::vector<int> slot_assignment(const Tensor& attn);

// Adjusted Rand index between two T*N labelings, computed per frame and
// averaged.  Degenerate frames (no index variation): 1 when the partitions
// coincide, else 0.
double ari(const std::vector<int>& labels_a, const std::vector<int>& labels_b, std::size_t t,
           std::size_t n);

} // namespace vtg

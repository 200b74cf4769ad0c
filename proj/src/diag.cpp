#include "vtg/diag.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vtg/rng.hpp"

namespace vtg {

void ReprSet::validate() const {
    if (vectors.empty()) throw ValueError("empty representation set");
    std::size_t d = vectors.front().size();
    if (d == 0) throw ValueError("zero-dimensional representation");
    for (const auto& v : vectors) {
        if (v.size() != d)
            throw DimensionError("ragged representation set: " + std::to_string(v.size()) + " vs " +
                                 std::to_string(d));
        for (double x : v)
            if (!std::isfinite(x)) throw ValueError("non-finite value in representation set");
    }
}

std::vector<double> pool_video_repr(const Tensor& hidden) {
    if (!hidden.defined()) throw ValueError("pool_video_repr: undefined tensor");
    if (hidden.rank() != 3)
        throw DimensionError("pool_video_repr: expected [T, N, D], got " + shape_str(hidden.shape()));
    std::size_t rows = hidden.shape()[0] * hidden.shape()[1], d = hidden.shape()[2];
    std::vector<double> out(d, 0.0);
    const auto& v = hidden.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) out[j] += v[r * d + j];
    for (double& x : out) {
        x /= static_cast<double>(rows);
        if (!std::isfinite(x)) throw NumericError("non-finite pooled representation");
    }
    return out;
}

namespace {

double dist2(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

double norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// Median pairwise distance over the pooled set (midpoint-averaged for even
// pair counts); 0 collapses to the fallback bandwidth 1.0.
double median_bandwidth(const ReprSet& x, const ReprSet& y, bool* fallback) {
    std::vector<const std::vector<double>*> pts;
    for (const auto& v : x.vectors) pts.push_back(&v);
    for (const auto& v : y.vectors) pts.push_back(&v);
    std::vector<double> d;
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j)
            d.push_back(std::sqrt(dist2(*pts[i], *pts[j])));
    std::sort(d.begin(), d.end());
    double med = d.size() % 2 == 1 ? d[d.size() / 2]
                                   : 0.5 * (d[d.size() / 2 - 1] + d[d.size() / 2]);
    *fallback = med <= 0.0;
    return *fallback ? 1.0 : med;
}

// Summing kernel terms in sorted order makes the estimate independent of
// argument order and of any permutation of points within a set, at the bit
// level: the term multiset is invariant, so the sorted sum is too.
double sorted_sum(std::vector<double>& terms) {
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
}

double within_sum(const ReprSet& a, double inv, bool unbiased) {
    std::vector<double> terms;
    terms.reserve(a.size() * a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a.size(); ++j)
            if (!unbiased || i != j)
                terms.push_back(std::exp(-dist2(a.vectors[i], a.vectors[j]) * inv));
    return sorted_sum(terms);
}

Mmd2Result mmd2_impl(const ReprSet& x, const ReprSet& y, bool unbiased) {
    x.validate();
    y.validate();
    if (x.dim() != y.dim())
        throw DimensionError("representation dims differ: " + std::to_string(x.dim()) + " vs " +
                             std::to_string(y.dim()));
    std::size_t m = x.size(), n = y.size();
    if (unbiased && (m < 2 || n < 2))
        throw ValueError("unbiased MMD^2 needs at least 2 points per set");

    Mmd2Result r;
    r.n_x = m;
    r.n_y = n;
    r.bandwidth = median_bandwidth(x, y, &r.bandwidth_fallback);
    double inv = 1.0 / (2.0 * r.bandwidth * r.bandwidth);

    double kxx = within_sum(x, inv, unbiased);
    double kyy = within_sum(y, inv, unbiased);
    std::vector<double> cross;
    cross.reserve(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            cross.push_back(std::exp(-dist2(x.vectors[i], y.vectors[j]) * inv));
    double kxy = sorted_sum(cross);

    double md = static_cast<double>(m), nd = static_cast<double>(n);
    double sx = unbiased ? md * (md - 1.0) : md * md;
    double sy = unbiased ? nd * (nd - 1.0) : nd * nd;
    r.raw = kxx / sx + kyy / sy - 2.0 * kxy / (md * nd);
    r.value = std::max(r.raw, 0.0);
    return r;
}

} // namespace

Mmd2Result mmd2(const ReprSet& x, const ReprSet& y) { return mmd2_impl(x, y, true); }

Mmd2Result mmd2_biased(const ReprSet& x, const ReprSet& y) { return mmd2_impl(x, y, false); }

SimrankSplit simrank_split(const ReprSet& train, const ReprSet& test, double fraction) {
    train.validate();
    test.validate();
    if (train.dim() != test.dim())
        throw DimensionError("representation dims differ: " + std::to_string(train.dim()) + " vs " +
                             std::to_string(test.dim()));
    if (!(fraction > 0.0) || fraction > 0.5)
        throw ValueError("fraction must be in (0, 0.5], got " + std::to_string(fraction));

    std::size_t n = test.size();
    std::vector<double> train_norm(train.size());
    for (std::size_t j = 0; j < train.size(); ++j) train_norm[j] = norm(train.vectors[j]);

    SimrankSplit out;
    out.scores.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double ni = norm(test.vectors[i]);
        double best = -1.0;
        for (std::size_t j = 0; j < train.size(); ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < test.dim(); ++c) dot += train.vectors[j][c] * test.vectors[i][c];
            double denom = ni * train_norm[j];
            best = std::max(best, denom < 1e-24 ? 0.0 : dot / denom);
        }
        out.scores[i] = best;
    }

    std::size_t k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    k = std::min(k, n / 2);   // keeps the two sets disjoint for odd n
    if (k == 0) throw ValueError("fraction selects zero samples from a set of " + std::to_string(n));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (out.scores[a] != out.scores[b]) return out.scores[a] > out.scores[b];
        return a < b;
    });
    out.top.assign(order.begin(), order.begin() + static_cast<long>(k));
    // Bottom set: ascending score, ties again toward the lower id.
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (out.scores[a] != out.scores[b]) return out.scores[a] < out.scores[b];
        return a < b;
    });
    out.bottom.assign(order.begin(), order.begin() + static_cast<long>(k));
    return out;
}

VideoSample perturb_sample(const VideoSample& s, const PerturbSpec& spec, bool* overlap_warning) {
    if (!s.frames.defined() || s.frames.rank() != 3)
        throw ValueError("perturb_sample: frames must be [T, N, D]");
    if (spec.noise_scale < 0.0) throw ValueError("noise_scale must be >= 0");
    std::size_t T = s.frames.shape()[0], N = s.frames.shape()[1], D = s.frames.shape()[2];
    if (s.times.size() != T) throw ValueError("perturb_sample: frame/time count mismatch");

    // Contiguous frame span covered by the GT window.
    std::size_t a = T, b = 0;
    for (std::size_t t = 0; t < T; ++t) {
        if (s.times[t] >= s.gt_window.start && s.times[t] <= s.gt_window.end) {
            a = std::min(a, t);
            b = std::max(b, t);
        }
    }
    VideoSample out = s;
    if (a == T) return out;   // window covers no frame: nothing to perturb
    std::size_t len = b - a + 1;

    Rng rng = Rng(spec.seed).split("perturb").split(s.sample_id);
    std::size_t lo = a, hi = b;
    if (spec.mode == PerturbSpec::Mode::random_window) {
        std::vector<std::size_t> starts;
        for (std::size_t st = 0; st + len <= T; ++st)
            if (st + len - 1 < a || st > b) starts.push_back(st);
        if (starts.empty()) {
            if (overlap_warning) *overlap_warning = true;
            lo = rng.index(T - len + 1);
        } else {
            lo = starts[rng.index(starts.size())];
        }
        hi = lo + len - 1;
    }

    // Per-dimension population std over all tokens of this sample.
    std::vector<double> f = s.frames.data();
    std::vector<double> mean(D, 0.0), sd(D, 0.0);
    std::size_t rows = T * N;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < D; ++j) mean[j] += f[r * D + j];
    for (double& x : mean) x /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < D; ++j) {
            double c = f[r * D + j] - mean[j];
            sd[j] += c * c;
        }
    for (double& x : sd) x = std::sqrt(x / static_cast<double>(rows));

    for (std::size_t t = lo; t <= hi; ++t)
        for (std::size_t nn = 0; nn < N; ++nn)
            for (std::size_t j = 0; j < D; ++j)
                f[(t * N + nn) * D + j] += spec.noise_scale * sd[j] * rng.normal();
    out.frames = Tensor::from_data({T, N, D}, std::move(f));
    return out;
}

PerturbResult perturb_eval(const PredictFn& model, const std::vector<VideoSample>& samples,
                           const PerturbSpec& spec) {
    if (samples.empty()) throw ValueError("perturb_eval: empty sample set");
    PerturbResult res;
    std::vector<Prediction> clean_preds, pert_preds;
    std::vector<Window> gts;
    for (const VideoSample& s : samples) {
        gts.push_back(s.gt_window);
        clean_preds.push_back(model(s));
        pert_preds.push_back(model(perturb_sample(s, spec, &res.overlap_warning)));
    }
    res.clean = recall_at_iou(clean_preds, gts, spec.tau);
    res.perturbed = recall_at_iou(pert_preds, gts, spec.tau);
    res.drop = res.clean > 0.0 ? (res.clean - res.perturbed) / res.clean : 0.0;
    return res;
}

} // namespace vtg

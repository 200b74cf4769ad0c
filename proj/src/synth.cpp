#include "vtg/synth.hpp"

#include <algorithm>
#include <cmath>

#include "vtg/vocab.hpp"

namespace vtg {

void SynthSpec::validate() const {
    if (t_frames == 0) throw ConfigError("synth t_frames must be >= 1");
    if (n_tokens == 0) throw ConfigError("synth n_tokens must be >= 1");
    if (n_entities < 2) throw ConfigError("synth n_entities must be >= 2 (target plus distractors)");
    if (n_entities > n_tokens)
        throw ConfigError("infeasible partition: n_entities (" + std::to_string(n_entities) +
                          ") exceeds n_tokens (" + std::to_string(n_tokens) + ")");
    if (n_entities > Vocab::n_query_words)
        throw ConfigError("synth n_entities exceeds the query word pool (" +
                          std::to_string(Vocab::n_query_words) + ")");
    if (feat_dim == 0) throw ConfigError("synth feat_dim must be >= 1");
    if (!(separation > 0.0)) throw ConfigError("synth separation must be > 0");
    if (!(frame_dt > 0.0)) throw ConfigError("synth frame_dt must be > 0");
}

namespace {

// Entity prototype centroids, one per query word; dataset-level.
std::vector<double> make_pool(const SynthSpec& spec) {
    Rng rng = Rng(spec.seed).split("pool");
    std::vector<double> pool(Vocab::n_query_words * spec.feat_dim);
    for (auto& x : pool) x = rng.normal(0.0, spec.separation);
    return pool;
}

// Orthogonal matrix via Gram-Schmidt on a seeded Gaussian draw.
std::vector<double> make_rotation(std::size_t d, Rng& rng) {
    std::vector<double> q(d * d);
    for (auto& x : q) x = rng.normal();
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += q[i * d + c] * q[j * d + c];
            for (std::size_t c = 0; c < d; ++c) q[i * d + c] -= dot * q[j * d + c];
        }
        double norm = 0.0;
        for (std::size_t c = 0; c < d; ++c) norm += q[i * d + c] * q[i * d + c];
        norm = std::sqrt(norm);
        if (norm < 1e-12) throw NumericError("degenerate rotation draw");
        for (std::size_t c = 0; c < d; ++c) q[i * d + c] /= norm;
    }
    return q;
}

void apply_shift(std::vector<double>& feats, const SynthSpec& spec) {
    if (!spec.shift.enabled) return;
    std::size_t d = spec.feat_dim;
    Rng rng = Rng(spec.seed).split("shift");
    std::vector<double> rot;
    if (spec.shift.rotate) rot = make_rotation(d, rng);
    std::vector<double> tmp(d);
    for (std::size_t row = 0; row < feats.size() / d; ++row) {
        double* v = feats.data() + row * d;
        if (spec.shift.rotate) {
            for (std::size_t i = 0; i < d; ++i) {
                tmp[i] = 0.0;
                for (std::size_t c = 0; c < d; ++c) tmp[i] += rot[i * d + c] * v[c];
            }
            std::copy(tmp.begin(), tmp.end(), v);
        }
        for (std::size_t i = 0; i < d; ++i) v[i] += spec.shift.bias_scale;
    }
}

} // namespace

SynthVideo gen_video(const SynthSpec& spec, std::string_view stream, std::uint64_t index) {
    spec.validate();
    std::vector<double> pool = make_pool(spec);
    Rng rng = Rng(spec.seed).split(stream).split(index);

    std::size_t T = spec.t_frames, N = spec.n_tokens, d = spec.feat_dim, k = spec.n_entities;

    SynthVideo v;
    v.sample_id = index;
    v.times.resize(T);
    for (std::size_t t = 0; t < T; ++t) v.times[t] = static_cast<double>(t) * spec.frame_dt;

    // Entities for this video: first is the target, the rest distractors.
    std::vector<std::size_t> perm = rng.permutation(Vocab::n_query_words);
    std::vector<int> entities(perm.begin(), perm.begin() + static_cast<long>(k));
    v.target_entity = entities[0];

    // Ground-truth window on the frame grid.
    std::size_t max_len = std::max<std::size_t>(1, T / 2);
    std::size_t len = 1 + rng.index(max_len);
    std::size_t start = rng.index(T - len + 1);
    v.gt_window = {v.times[start], v.times[start + len - 1]};

    v.labels.assign(T * N, 0);
    std::vector<double> feats(T * N * d);
    for (std::size_t t = 0; t < T; ++t) {
        bool in_window = t >= start && t < start + len;
        // Present entities, shuffled so block order varies per frame.
        std::vector<int> present;
        for (std::size_t e = in_window ? 0 : 1; e < k; ++e) present.push_back(entities[e]);
        std::vector<std::size_t> order = rng.permutation(present.size());

        // Contiguous blocks: distinct interior cut points.
        std::size_t blocks = present.size();
        std::vector<std::size_t> cuts = rng.permutation(N - 1);
        cuts.resize(blocks - 1);
        for (auto& c : cuts) ++c;   // shift into [1, N-1]
        std::sort(cuts.begin(), cuts.end());
        cuts.push_back(N);

        std::size_t at = 0;
        for (std::size_t b = 0; b < blocks; ++b) {
            int ent = present[order[b]];
            for (; at < cuts[b]; ++at) {
                v.labels[t * N + at] = ent;
                double* f = feats.data() + (t * N + at) * d;
                const double* c = pool.data() + static_cast<std::size_t>(ent) * d;
                for (std::size_t i = 0; i < d; ++i) f[i] = c[i] + rng.normal();
            }
        }
    }
    apply_shift(feats, spec);
    v.frames = Tensor::from_data({T, N, d}, std::move(feats));
    return v;
}

std::pair<std::vector<SynthVideo>, std::vector<SynthVideo>> gen_dataset(const SynthSpec& spec,
                                                                        std::size_t n_train,
                                                                        std::size_t n_eval, bool ood) {
    if (n_train == 0 || n_eval == 0) throw ValueError("gen_dataset: counts must be >= 1");
    SynthSpec s = spec;
    s.shift.enabled = ood;
    std::pair<std::vector<SynthVideo>, std::vector<SynthVideo>> out;
    for (std::size_t i = 0; i < n_train; ++i) out.first.push_back(gen_video(s, "train", i));
    for (std::size_t i = 0; i < n_eval; ++i) out.second.push_back(gen_video(s, "eval", i));
    return out;
}

Tensor label_affinity(const std::vector<int>& labels, std::size_t t, std::size_t n) {
    if (t == 0 || n == 0) throw ValueError("label_affinity: T and N must be >= 1");
    if (labels.size() != t * n)
        throw DimensionError("label_affinity: got " + std::to_string(labels.size()) + " labels for T*N = " +
                             std::to_string(t * n));
    std::vector<double> m(t * n * n);
    for (std::size_t f = 0; f < t; ++f)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                m[(f * n + i) * n + j] = labels[f * n + i] == labels[f * n + j] ? 1.0 : -1.0;
    return Tensor::from_data({t, n, n}, std::move(m));
}

std::vector<int> slot_assignment(const Tensor& attn) {
    if (attn.rank() != 3) throw DimensionError("slot_assignment: expected [T,N,n_slots], got " + shape_str(attn.shape()));
    std::size_t rows = attn.shape()[0] * attn.shape()[1], ns = attn.shape()[2];
    std::vector<int> ids(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t best = 0;
        for (std::size_t s = 1; s < ns; ++s)
            if (attn.at(r * ns + s) > attn.at(r * ns + best)) best = s;
        ids[r] = static_cast<int>(best);
    }
    return ids;
}

namespace {

// Canonical first-occurrence relabeling, for degenerate-case comparison.
std::vector<int> canon(const int* x, std::size_t n) {
    std::vector<int> out(n);
    std::vector<int> seen;
    for (std::size_t i = 0; i < n; ++i) {
        auto it = std::find(seen.begin(), seen.end(), x[i]);
        if (it == seen.end()) {
            seen.push_back(x[i]);
            out[i] = static_cast<int>(seen.size()) - 1;
        } else {
            out[i] = static_cast<int>(it - seen.begin());
        }
    }
    return out;
}

double ari_frame(const int* a, const int* b, std::size_t n) {
    std::vector<int> ca = canon(a, n), cb = canon(b, n);
    int ka = *std::max_element(ca.begin(), ca.end()) + 1;
    int kb = *std::max_element(cb.begin(), cb.end()) + 1;
    std::vector<double> cont(static_cast<std::size_t>(ka) * kb, 0.0);
    std::vector<double> ra(ka, 0.0), rb(kb, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        cont[static_cast<std::size_t>(ca[i]) * kb + cb[i]] += 1.0;
        ra[ca[i]] += 1.0;
        rb[cb[i]] += 1.0;
    }
    auto comb2 = [](double x) { return x * (x - 1.0) / 2.0; };
    double sij = 0.0, sa = 0.0, sb = 0.0;
    for (double c : cont) sij += comb2(c);
    for (double c : ra) sa += comb2(c);
    for (double c : rb) sb += comb2(c);
    double total = comb2(static_cast<double>(n));
    double expected = total > 0.0 ? sa * sb / total : 0.0;
    double denom = 0.5 * (sa + sb) - expected;
    if (denom == 0.0) return ca == cb ? 1.0 : 0.0;
    return (sij - expected) / denom;
}

} // namespace

double ari(const std::vector<int>& labels_a, const std::vector<int>& labels_b, std::size_t t,
           std::size_t n) {
    if (t == 0 || n == 0) throw ValueError("ari: T and N must be >= 1");
    if (labels_a.size() != t * n || labels_b.size() != t * n)
        throw DimensionError("ari: label sizes " + std::to_string(labels_a.size()) + "/" +
                             std::to_string(labels_b.size()) + " do not match T*N = " + std::to_string(t * n));
    double sum = 0.0;
    for (std::size_t f = 0; f < t; ++f) sum += ari_frame(labels_a.data() + f * n, labels_b.data() + f * n, n);
    return sum / static_cast<double>(t);
}

} // namespace vtg

#include "vtg/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vtg {

VideoSample to_sample(const SynthVideo& v, const Vocab& vocab) {
    VideoSample s;
    s.sample_id = v.sample_id;
    s.frames = v.frames;
    s.times = v.times;
    s.query = {vocab.query_word_id(static_cast<std::size_t>(v.target_entity))};
    s.gt_window = v.gt_window;
    s.labels = v.labels;
    return s;
}

void DecoderConfig::validate() const {
    if (n_layers == 0) throw ConfigError("n_layers must be >= 1");
    if (d_model == 0) throw ConfigError("d_model must be >= 1");
    if (n_heads == 0 || d_model % n_heads != 0)
        throw ConfigError("n_heads must be >= 1 and divide d_model (" + std::to_string(n_heads) +
                          " vs " + std::to_string(d_model) + ")");
    if (d_feat == 0) throw ConfigError("d_feat must be >= 1");
    if (max_positions == 0) throw ConfigError("max_positions must be >= 1");
    if (max_decode_len == 0) throw ConfigError("max_decode_len must be >= 1");
    for (std::size_t i = 0; i < adapter_layers.size(); ++i) {
        if (adapter_layers[i] != i)
            throw ConfigError("adapter_layers must be the 0-based early prefix {0..k-1}");
    }
    if (adapter_layers.size() > n_layers) throw ConfigError("adapter_layers exceed n_layers");
    for (std::size_t l : lora_layers) {
        if (l >= n_layers)
            throw ConfigError("lora_layers entry " + std::to_string(l) + " out of range " +
                              std::to_string(n_layers));
        if (std::find(adapter_layers.begin(), adapter_layers.end(), l) != adapter_layers.end())
            throw ConfigError("layer " + std::to_string(l) + " is in both adapter_layers and lora_layers");
    }
    std::vector<std::size_t> ll = lora_layers;
    std::sort(ll.begin(), ll.end());
    if (std::adjacent_find(ll.begin(), ll.end()) != ll.end())
        throw ConfigError("duplicate entry in lora_layers");
    if (!lora_layers.empty()) {
        if (lora_rank == 0) throw ConfigError("lora_rank must be >= 1");
        if (lora_rank > d_model)
            throw ConfigError("lora_rank " + std::to_string(lora_rank) + " exceeds weight dim " +
                              std::to_string(d_model));
        if (!(lora_alpha > 0.0)) throw ConfigError("lora_alpha must be > 0");
    }
    if (!adapter_layers.empty()) {
        if (adapter.d_host != d_model)
            throw ConfigError("adapter.d_host (" + std::to_string(adapter.d_host) +
                              ") must equal d_model (" + std::to_string(d_model) + ")");
        adapter.validate();
    }
}

std::vector<std::size_t> TokenSequence::visual_positions() const {
    std::vector<std::size_t> out;
    for (std::size_t p = 0; p < kinds.size(); ++p)
        if (kinds[p] == TokenKind::VISUAL) out.push_back(p);
    return out;
}

void TokenSequence::append_target(int id) {
    ids.push_back(id);
    kinds.push_back(TokenKind::TARGET);
    frame_index.push_back(-1);
}

TokenSequence build_sequence(const VideoSample& sample, const Vocab& vocab, bool include_target) {
    if (!sample.frames.defined() || sample.frames.rank() != 3)
        throw ValueError("sample frames must be a [T, N, d_feat] tensor");
    std::size_t T = sample.frames.shape()[0], N = sample.frames.shape()[1];
    if (T == 0 || N == 0) throw ValueError("sample needs at least one frame and one visual token");
    if (sample.times.size() != T)
        throw ValueError("frame/time count mismatch: " + std::to_string(T) + " frames vs " +
                         std::to_string(sample.times.size()) + " times");
    for (std::size_t t = 0; t < T; ++t) {
        if (!std::isfinite(sample.times[t]) || sample.times[t] < 0.0)
            throw ValueError("times must be finite and non-negative");
        if (t > 0 && sample.times[t] <= sample.times[t - 1])
            throw ValueError("times must be strictly increasing");
    }
    if (sample.query.empty()) throw ValueError("empty query");
    for (int id : sample.query) vocab.symbol(id);   // range check

    TokenSequence seq;
    seq.visual_feats = sample.frames;
    seq.t_frames = T;
    seq.n_tokens = N;
    auto push = [&seq](int id, TokenKind kind, int frame) {
        seq.ids.push_back(id);
        seq.kinds.push_back(kind);
        seq.frame_index.push_back(frame);
    };
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t n = 0; n < N; ++n) push(Vocab::VIS, TokenKind::VISUAL, static_cast<int>(t));
        for (int id : tokenize_timestamp(sample.times[t], vocab)) push(id, TokenKind::TIMESTAMP, -1);
    }
    for (int id : sample.query) push(id, TokenKind::QUERY, -1);
    if (include_target) {
        validate_window(sample.gt_window);
        if (sample.gt_window.end > sample.times.back())
            throw ValueError("gt window end " + std::to_string(sample.gt_window.end) +
                             " exceeds video duration " + std::to_string(sample.times.back()));
        for (int id : vocab.encode(render_window(sample.gt_window))) push(id, TokenKind::TARGET, -1);
        push(Vocab::EOS, TokenKind::TARGET, -1);
    }
    return seq;
}

Tensor lora_apply(const Tensor& base, const Tensor& a, const Tensor& b, double alpha,
                  std::size_t rank) {
    if (base.rank() != 2 || a.rank() != 2 || b.rank() != 2)
        throw DimensionError("lora_apply: rank-2 tensors required");
    std::size_t m = base.shape()[0], n = base.shape()[1];
    if (rank > std::min(m, n))
        throw ConfigError("lora rank " + std::to_string(rank) + " exceeds min weight dim " +
                          std::to_string(std::min(m, n)));
    if (a.shape() != Shape{rank, n} || b.shape() != Shape{m, rank})
        throw DimensionError("lora_apply: expected A [r, n] and B [m, r] against base " +
                             shape_str(base.shape()));
    return add(base, scale(matmul(b, a), alpha / static_cast<double>(rank)));
}

GroundingDecoder::GroundingDecoder(DecoderConfig cfg, AdapterType type, Rng& rng)
    : cfg_(std::move(cfg)), type_(type) {
    cfg_.validate();
    std::size_t D = cfg_.d_model, V = vocab_.size(), F = 4 * D;
    const double sd = 0.02;

    // Base weights come from a dedicated stream so their values do not depend
    // on whether adapters or LoRA are attached.
    Rng base_rng = rng.split("base");
    embed_ = Tensor::param_normal({V, D}, base_rng, sd, "decoder.embed");
    pos_ = Tensor::param_normal({cfg_.max_positions, D}, base_rng, sd, "decoder.pos");
    visual_proj_ = Tensor::param_normal({cfg_.d_feat, D}, base_rng, sd, "decoder.visual_proj");
    auto ones = [](std::size_t n, std::string name) {
        return Tensor::param({n}, std::vector<double>(n, 1.0), std::move(name));
    };
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        std::string p = "decoder.l" + std::to_string(l) + ".";
        Layer lay;
        lay.ln1_gain = ones(D, p + "ln1.gain");
        lay.ln1_bias = Tensor::param_zeros({D}, p + "ln1.bias");
        lay.wq = Tensor::param_normal({D, D}, base_rng, sd, p + "wq");
        lay.wk = Tensor::param_normal({D, D}, base_rng, sd, p + "wk");
        lay.wv = Tensor::param_normal({D, D}, base_rng, sd, p + "wv");
        lay.wo = Tensor::param_normal({D, D}, base_rng, sd, p + "wo");
        lay.ln2_gain = ones(D, p + "ln2.gain");
        lay.ln2_bias = Tensor::param_zeros({D}, p + "ln2.bias");
        lay.w1 = Tensor::param_normal({D, F}, base_rng, sd, p + "w1");
        lay.b1 = Tensor::param_zeros({F}, p + "b1");
        lay.w2 = Tensor::param_normal({F, D}, base_rng, sd, p + "w2");
        lay.b2 = Tensor::param_zeros({D}, p + "b2");
        layers_.push_back(std::move(lay));
    }
    lnf_gain_ = ones(D, "decoder.lnf.gain");
    lnf_bias_ = Tensor::param_zeros({D}, "decoder.lnf.bias");

    Rng lora_rng = rng.split("lora");
    for (std::size_t l : cfg_.lora_layers) {
        Layer& lay = layers_[l];
        std::string p = "decoder.l" + std::to_string(l) + ".";
        lay.lora = true;
        lay.lora_q_a = Tensor::param_normal({cfg_.lora_rank, D}, lora_rng, sd, p + "lora_q_a");
        lay.lora_q_b = Tensor::param_zeros({D, cfg_.lora_rank}, p + "lora_q_b");
        lay.lora_v_a = Tensor::param_normal({cfg_.lora_rank, D}, lora_rng, sd, p + "lora_v_a");
        lay.lora_v_b = Tensor::param_zeros({D, cfg_.lora_rank}, p + "lora_v_b");
    }

    if (type_ != AdapterType::none) {
        Rng ad_rng = rng.split("adapters");
        for (std::size_t l : cfg_.adapter_layers) {
            std::string prefix = "adapter" + std::to_string(l) + ".";
            if (type_ == AdapterType::slot)
                slot_adapters_.push_back(std::make_unique<SlotAdapter>(cfg_.adapter, ad_rng, prefix));
            else
                self_adapters_.push_back(std::make_unique<SelfAttentionAdapter>(cfg_.adapter, ad_rng, prefix));
        }
    }
}

Tensor GroundingDecoder::embed_rows(const TokenSequence& seq) const {
    std::size_t P = seq.length();
    std::vector<std::size_t> idx(P);
    for (std::size_t p = 0; p < P; ++p) {
        if (seq.ids[p] < 0 || static_cast<std::size_t>(seq.ids[p]) >= vocab_.size())
            throw ValueError("token id " + std::to_string(seq.ids[p]) + " out of vocabulary");
        idx[p] = static_cast<std::size_t>(seq.ids[p]);
    }
    Tensor x = take_rows(embed_, idx);
    std::size_t TN = seq.t_frames * seq.n_tokens;
    Tensor proj = matmul(reshape(seq.visual_feats, {TN, cfg_.d_feat}), visual_proj_);
    x = put_rows(x, proj, seq.visual_positions());
    std::vector<std::size_t> pidx(P);
    std::iota(pidx.begin(), pidx.end(), std::size_t{0});
    return add(x, take_rows(pos_, pidx));
}

Tensor GroundingDecoder::attention(const Layer& l, const Tensor& h, const Tensor& mask) const {
    Tensor hn = layer_norm(h, l.ln1_gain, l.ln1_bias);
    Tensor wq = l.lora ? lora_apply(l.wq, l.lora_q_a, l.lora_q_b, cfg_.lora_alpha, cfg_.lora_rank)
                       : l.wq;
    Tensor wv = l.lora ? lora_apply(l.wv, l.lora_v_a, l.lora_v_b, cfg_.lora_alpha, cfg_.lora_rank)
                       : l.wv;
    auto qs = split_axis(matmul(hn, wq), 1, cfg_.n_heads);
    auto ks = split_axis(matmul(hn, l.wk), 1, cfg_.n_heads);
    auto vs = split_axis(matmul(hn, wv), 1, cfg_.n_heads);
    double s = 1.0 / std::sqrt(static_cast<double>(cfg_.d_model / cfg_.n_heads));
    std::vector<Tensor> outs;
    for (std::size_t i = 0; i < cfg_.n_heads; ++i) {
        Tensor scores = add(scale(matmul(qs[i], transpose_last2(ks[i])), s), mask);
        outs.push_back(matmul(softmax_axis(scores, 1), vs[i]));
    }
    return matmul(concat_axis(outs, 1), l.wo);
}

GroundingDecoder::ForwardOut GroundingDecoder::forward(const TokenSequence& seq) const {
    std::size_t P = seq.length();
    if (P == 0) throw ValueError("empty token sequence");
    if (P > cfg_.max_positions)
        throw ValueError("sequence length " + std::to_string(P) + " exceeds positional table " +
                         std::to_string(cfg_.max_positions));
    if (!seq.visual_feats.defined() ||
        seq.visual_feats.shape() != Shape{seq.t_frames, seq.n_tokens, cfg_.d_feat})
        throw DimensionError("visual features do not match [T, N, d_feat]");

    // Additive causal mask: position p sees keys <= p.
    std::vector<double> m(P * P, 0.0);
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t k = p + 1; k < P; ++k) m[p * P + k] = -1e9;
    Tensor mask = Tensor::from_data({P, P}, std::move(m));

    std::vector<std::size_t> vis_pos = seq.visual_positions();
    std::size_t TN = seq.t_frames * seq.n_tokens;
    Tensor h = embed_rows(seq);
    ForwardOut out;
    std::size_t ai = 0;
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        const Layer& lay = layers_[l];
        h = add(h, attention(lay, h, mask));
        Tensor hn = layer_norm(h, lay.ln2_gain, lay.ln2_bias);
        Tensor f = add(matmul(hn, lay.w1), lay.b1);
        h = add(h, add(matmul(mul(f, sigmoid(f)), lay.w2), lay.b2));

        bool is_adapter = std::find(cfg_.adapter_layers.begin(), cfg_.adapter_layers.end(), l) !=
                          cfg_.adapter_layers.end();
        if (is_adapter && type_ != AdapterType::none) {
            // The adapter touches only VISUAL rows, regrouped per frame.
            Tensor x3 = reshape(take_rows(h, vis_pos), {seq.t_frames, seq.n_tokens, cfg_.d_model});
            Tensor y3;
            if (type_ == AdapterType::slot) {
                SlotAdapter::ForwardOut fo = slot_adapters_[ai]->forward(x3);
                out.adapter_outs.push_back(fo.slot_out);
                y3 = fo.x_out;
            } else {
                y3 = self_adapters_[ai]->forward(x3);
            }
            ++ai;
            h = put_rows(h, reshape(y3, {TN, cfg_.d_model}), vis_pos);
        }
        if (!cfg_.adapter_layers.empty() && l == cfg_.adapter_layers.back())
            out.visual_hidden =
                reshape(take_rows(h, vis_pos), {seq.t_frames, seq.n_tokens, cfg_.d_model});
    }
    // Tied unembedding: logits read out against the token embedding matrix.
    out.logits = matmul(layer_norm(h, lnf_gain_, lnf_bias_), transpose_last2(embed_));
    return out;
}

Tensor GroundingDecoder::ce_loss(const Tensor& logits, const TokenSequence& seq) const {
    std::size_t P = seq.length();
    if (logits.rank() != 2 || logits.shape()[0] != P || logits.shape()[1] != vocab_.size())
        throw DimensionError("ce_loss: logits " + shape_str(logits.shape()) + " do not match sequence");
    std::vector<int> targets(P, Vocab::PAD);
    std::vector<std::uint8_t> mask(P, 0);
    std::size_t n_scored = 0;
    for (std::size_t p = 0; p + 1 < P; ++p) {
        if (seq.kinds[p + 1] == TokenKind::TARGET) {
            targets[p] = seq.ids[p + 1];
            mask[p] = 1;
            ++n_scored;
        }
    }
    if (n_scored == 0) throw ValueError("sequence has no TARGET positions to score");
    return cross_entropy_rows(logits, targets, mask);
}

std::string greedy_decode_with(const std::function<std::vector<double>(const TokenSequence&)>& step,
                               TokenSequence seq, const Vocab& vocab, std::size_t max_len) {
    std::vector<int> out;
    for (std::size_t i = 0; i < max_len; ++i) {
        std::vector<double> row = step(seq);
        if (row.size() != vocab.size())
            throw DimensionError("decode step returned " + std::to_string(row.size()) +
                                 " logits for vocab " + std::to_string(vocab.size()));
        std::size_t best = 0;   // ties resolve to the lowest id
        for (std::size_t j = 1; j < row.size(); ++j)
            if (row[j] > row[best]) best = j;
        if (static_cast<int>(best) == Vocab::EOS) break;
        seq.append_target(static_cast<int>(best));
        out.push_back(static_cast<int>(best));
    }
    return vocab.decode(out);
}

std::string GroundingDecoder::greedy_decode(const TokenSequence& prefix) const {
    NoGradGuard ng;
    auto step = [this](const TokenSequence& s) {
        if (s.length() >= cfg_.max_positions) {
            // Positional table exhausted: terminate via a forced EOS.
            std::vector<double> row(vocab_.size(), 0.0);
            row[Vocab::EOS] = 1.0;
            return row;
        }
        ForwardOut fo = forward(s);
        const auto& d = fo.logits.data();
        std::size_t off = (s.length() - 1) * vocab_.size();
        return std::vector<double>(d.begin() + static_cast<long>(off),
                                   d.begin() + static_cast<long>(off + vocab_.size()));
    };
    return greedy_decode_with(step, prefix, vocab_, cfg_.max_decode_len);
}

std::vector<Tensor> GroundingDecoder::base_parameters() const {
    std::vector<Tensor> out = {embed_, pos_, visual_proj_};
    for (const Layer& l : layers_) {
        for (const Tensor& t : {l.ln1_gain, l.ln1_bias, l.wq, l.wk, l.wv, l.wo, l.ln2_gain,
                                l.ln2_bias, l.w1, l.b1, l.w2, l.b2})
            out.push_back(t);
    }
    out.push_back(lnf_gain_);
    out.push_back(lnf_bias_);
    return out;
}

std::vector<Tensor> GroundingDecoder::tuned_parameters() const {
    std::vector<Tensor> out;
    for (const auto& a : slot_adapters_)
        for (const Tensor& t : a->parameters()) out.push_back(t);
    for (const auto& a : self_adapters_)
        for (const Tensor& t : a->parameters()) out.push_back(t);
    for (const Layer& l : layers_) {
        if (!l.lora) continue;
        for (const Tensor& t : {l.lora_q_a, l.lora_q_b, l.lora_v_a, l.lora_v_b}) out.push_back(t);
    }
    return out;
}

std::vector<Tensor> GroundingDecoder::parameters() const {
    std::vector<Tensor> out = base_parameters();
    for (const Tensor& t : tuned_parameters()) out.push_back(t);
    return out;
}

void GroundingDecoder::set_base_trainable(bool trainable) {
    for (Tensor& t : base_parameters()) t.set_requires_grad(trainable);
}

Tensor GroundingDecoder::param(const std::string& name) const {
    for (const Tensor& t : parameters())
        if (t.name() == name) return t;
    throw ContractError("no parameter named '" + name + "'");
}

std::size_t GroundingDecoder::n_adapters() const {
    return slot_adapters_.size() + self_adapters_.size();
}

const SlotAdapter& GroundingDecoder::slot_adapter(std::size_t i) const {
    if (type_ != AdapterType::slot) throw ContractError("decoder has no slot adapters");
    if (i >= slot_adapters_.size())
        throw ContractError("slot adapter index " + std::to_string(i) + " out of range");
    return *slot_adapters_[i];
}

} // namespace vtg

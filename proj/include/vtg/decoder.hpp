#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vtg/adapter.hpp"
#include "vtg/metrics.hpp"
#include "vtg/rng.hpp"
#include "vtg/synth.hpp"
#include "vtg/tensor.hpp"
#include "vtg/vocab.hpp"

namespace vtg {

enum class AdapterType { slot, self_attention, none };

struct VideoSample {
    std::size_t sample_id = 0;
    Tensor frames;               // [T, N, d_feat]
    std::vector<double> times;   // seconds, strictly increasing
    std::vector<int> query;      // vocabulary ids
    Window gt_window;
    std::vector<int> labels;     // planted token labels when known, else empty
};

VideoSample to_sample(const SynthVideo& v, const Vocab& vocab);

struct DecoderConfig {
    std::size_t n_layers = 6;
    std::size_t d_model = 128;
    std::size_t n_heads = 4;
    std::size_t d_feat = 16;                            // input frame feature dim
    std::vector<std::size_t> adapter_layers = {0, 1};   // 0-based early prefix
    std::vector<std::size_t> lora_layers = {2, 3, 4, 5};
    std::size_t lora_rank = 16;
    double lora_alpha = 64.0;
    std::size_t max_positions = 640;    // learned positional table size
    std::size_t max_decode_len = 24;
    AdapterConfig adapter;              // adapter.d_host must equal d_model

    void validate() const;              // ConfigError naming the offending field
    bool operator==(const DecoderConfig&) const = default;
};

// Interleaved [f1, t1, f2, t2, ..., fT, tT, q] (+ TARGET text) sequence.
// VISUAL positions carry projected frame features instead of embeddings.
struct TokenSequence {
    std::vector<int> ids;
    std::vector<TokenKind> kinds;
    std::vector<int> frame_index;   // frame id at VISUAL positions, else -1
    Tensor visual_feats;            // [T, N, d_feat]
    std::size_t t_frames = 0;
    std::size_t n_tokens = 0;       // visual tokens per frame

    std::size_t length() const { return ids.size(); }
    std::vector<std::size_t> visual_positions() const;
    void append_target(int id);     // extend with a TARGET-kind text token
};

TokenSequence build_sequence(const VideoSample& sample, const Vocab& vocab, bool include_target);

// W_eff = base + (alpha/rank) * b @ a, with a: [r, n] and b: [m, r].
Tensor lora_apply(const Tensor& base, const Tensor& a, const Tensor& b, double alpha,
                  std::size_t rank);

// Small pre-norm causal transformer over the interleaved sequence, with
// per-frame adapters on VISUAL rows in the early layers and low-rank updates
// on the q/v projections of the deeper layers.
class GroundingDecoder {
public:
    GroundingDecoder(DecoderConfig cfg, AdapterType type, Rng& rng);

    struct ForwardOut {
        Tensor logits;                                   // [P, vocab]
        std::vector<SlotAttentionOutput> adapter_outs;   // per adapter layer; slot type only
        Tensor visual_hidden;   // [T, N, D] at the exit of the last adapter layer
                                // (captured for any adapter type when such layers exist)
    };
    ForwardOut forward(const TokenSequence& seq) const;

    // Mean NLL over positions whose next token is a TARGET (teacher forcing).
    Tensor ce_loss(const Tensor& logits, const TokenSequence& seq) const;

    // Argmax continuation until EOS or the decode bound; returns decoded text.
    std::string greedy_decode(const TokenSequence& prefix) const;

    const DecoderConfig& config() const { return cfg_; }
    AdapterType adapter_type() const { return type_; }
    const Vocab& vocab() const { return vocab_; }

    std::vector<Tensor> base_parameters() const;
    std::vector<Tensor> tuned_parameters() const;   // adapter + LoRA params
    std::vector<Tensor> parameters() const;         // all, in a stable order
    void set_base_trainable(bool trainable);
    Tensor param(const std::string& name) const;    // exact-name lookup

    std::size_t n_adapters() const;
    const SlotAdapter& slot_adapter(std::size_t i) const;

private:
    struct Layer {
        Tensor ln1_gain, ln1_bias;
        Tensor wq, wk, wv, wo;
        Tensor ln2_gain, ln2_bias;
        Tensor w1, b1, w2, b2;
        bool lora = false;
        Tensor lora_q_a, lora_q_b, lora_v_a, lora_v_b;
    };

    Tensor embed_rows(const TokenSequence& seq) const;
    Tensor attention(const Layer& l, const Tensor& h, const Tensor& mask) const;

    DecoderConfig cfg_;
    AdapterType type_;
    Vocab vocab_;
    Tensor embed_;        // [V, D]
    Tensor pos_;          // [max_positions, D]
    Tensor visual_proj_;  // [d_feat, D]
    std::vector<Layer> layers_;
    Tensor lnf_gain_, lnf_bias_;
    std::vector<std::unique_ptr<SlotAdapter>> slot_adapters_;
    std::vector<std::unique_ptr<SelfAttentionAdapter>> self_adapters_;
};

// Decoding harness shared with tests: `step` maps the running sequence to the
// next-token logits row.
std::string greedy_decode_with(const std::function<std::vector<double>(const TokenSequence&)>& step,
                               TokenSequence seq, const Vocab& vocab, std::size_t max_len);

} // namespace vtg

#pragma once

#include <string>
#include <vector>

#include "vtg/rng.hpp"
#include "vtg/tensor.hpp"

namespace vtg {

enum class ReconMode { cross_attention, repeat_project };

struct AdapterConfig {
    std::size_t d_host = 512;      // D: hidden dim of the host model
    std::size_t d = 512;           // bottleneck dim
    std::size_t n_slots = 4;
    std::size_t n_iters = 3;
    std::size_t n_heads = 8;
    ReconMode recon_mode = ReconMode::cross_attention;
    double eps_token_norm = 1e-8;  // guards slots that attract no attention

    std::size_t d_head() const { return d / n_heads; }
    void validate() const;         // ConfigError naming the offending field
    bool operator==(const AdapterConfig&) const = default;
};

struct SlotAttentionOutput {
    Tensor slots;      // [T, n_slots, d], final iteration
    Tensor attn;       // A: [T, N, n_slots], softmax over slots, head-averaged
    Tensor attn_hat;   // A-hat: [T, N, n_slots], token-renormalized, head-averaged
};

// Bottleneck slot-attention adapter with a zero-initialized residual
// projection: freshly constructed, forward() is exactly the identity.
class SlotAdapter {
public:
    SlotAdapter(AdapterConfig cfg, Rng& rng, std::string prefix);

    // x: [T, N, d_host] -> [T, N, d]
    Tensor down_project(const Tensor& x) const;

    struct StepOut {
        Tensor slots;     // [T, n_slots, d]
        Tensor attn;      // head-averaged A
        Tensor attn_hat;  // head-averaged A-hat
        Tensor z;         // GRU input (attention readout), exposed for tests
    };
    // One competitive-attention + GRU update.  `slots` may be [n_slots, d]
    // (shared across frames, first iteration) or [T, n_slots, d].
    StepOut attention_step(const Tensor& slots, const Tensor& x_down) const;

    // n_iters iterations from the learned initial slots; returns the
    // final-iteration attention maps.
    SlotAttentionOutput run_slot_attention(const Tensor& x_down) const;

    // x_down as queries against the final slots (single-head cross-attention),
    // or slot tiling + linear map under ReconMode::repeat_project.
    Tensor reconstruct(const Tensor& x_down, const Tensor& slots) const;

    struct ForwardOut {
        Tensor x_out;     // [T, N, d_host]
        SlotAttentionOutput slot_out;
    };
    ForwardOut forward(const Tensor& x) const;

    std::vector<Tensor> parameters() const;
    const AdapterConfig& config() const { return cfg_; }
    // Parameter lookup by suffix (e.g. "w_up"); ContractError when absent.
    Tensor param(const std::string& suffix) const;

private:
    AdapterConfig cfg_;
    std::string prefix_;
    Tensor w_down_;                      // [d_host, d]
    Tensor ln_x_gain_, ln_x_bias_;       // input layer norm, [d]
    Tensor ln_s_gain_, ln_s_bias_;       // slot layer norm, [d]
    Tensor s0_;                          // learned slot queries, [n_slots, d]
    Tensor w_q_, w_k_, w_v_;             // [d, d], head-split at use
    Tensor gru_wr_, gru_ur_, gru_br_;    // reset gate
    Tensor gru_wz_, gru_uz_, gru_bz_;    // update gate
    Tensor gru_wn_, gru_un_, gru_bn_;    // candidate
    Tensor recon_q_, recon_k_, recon_v_; // cross-attention reconstruction
    Tensor w_rp_;                        // repeat_project linear, [d, d]
    Tensor w_up_;                        // [d, d_host], zero-initialized
};

// Ablation adapter: same bottleneck and zero-init residual shape, but plain
// single-head self-attention over tokens instead of slot competition.
class SelfAttentionAdapter {
public:
    SelfAttentionAdapter(AdapterConfig cfg, Rng& rng, std::string prefix);
    Tensor forward(const Tensor& x) const;   // [T, N, d_host] -> same shape
    std::vector<Tensor> parameters() const;
    const AdapterConfig& config() const { return cfg_; }

private:
    AdapterConfig cfg_;
    Tensor w_down_;
    Tensor ln_gain_, ln_bias_;
    Tensor w_q_, w_k_, w_v_;
    Tensor w_up_;
};

} // namespace vtg

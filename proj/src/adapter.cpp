#include "vtg/adapter.hpp"

#include <cmath>

namespace vtg {

namespace {

// Xavier-uniform: U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng, std::string name) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> v(fan_in * fan_out);
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return Tensor::param({fan_in, fan_out}, std::move(v), std::move(name));
}

Tensor ones_param(std::size_t n, std::string name) {
    return Tensor::param({n}, std::vector<double>(n, 1.0), std::move(name));
}

} // namespace

void AdapterConfig::validate() const {
    if (d_host == 0) throw ConfigError("adapter d_host must be positive");
    if (d == 0) throw ConfigError("adapter d must be positive");
    if (n_slots == 0) throw ConfigError("adapter n_slots must be >= 1");
    if (n_iters == 0) throw ConfigError("adapter n_iters must be >= 1");
    if (n_heads == 0) throw ConfigError("adapter n_heads must be >= 1");
    if (d % n_heads != 0)
        throw ConfigError("adapter d (" + std::to_string(d) + ") must be divisible by n_heads (" +
                          std::to_string(n_heads) + ")");
    if (!(eps_token_norm > 0.0)) throw ConfigError("adapter eps_token_norm must be > 0");
}

SlotAdapter::SlotAdapter(AdapterConfig cfg, Rng& rng, std::string prefix)
    : cfg_(cfg), prefix_(std::move(prefix)) {
    cfg_.validate();
    auto n = [this](const char* s) { return prefix_ + s; };
    std::size_t D = cfg_.d_host, d = cfg_.d;

    w_down_ = xavier(D, d, rng, n("w_down"));
    ln_x_gain_ = ones_param(d, n("ln_x_gain"));
    ln_x_bias_ = Tensor::param_zeros({d}, n("ln_x_bias"));
    ln_s_gain_ = ones_param(d, n("ln_s_gain"));
    ln_s_bias_ = Tensor::param_zeros({d}, n("ln_s_bias"));
    s0_ = Tensor::param_normal({cfg_.n_slots, d}, rng, 0.02, n("s0"));
    w_q_ = xavier(d, d, rng, n("w_q"));
    w_k_ = xavier(d, d, rng, n("w_k"));
    w_v_ = xavier(d, d, rng, n("w_v"));
    gru_wr_ = xavier(d, d, rng, n("gru_wr"));
    gru_ur_ = xavier(d, d, rng, n("gru_ur"));
    gru_br_ = Tensor::param_zeros({d}, n("gru_br"));
    gru_wz_ = xavier(d, d, rng, n("gru_wz"));
    gru_uz_ = xavier(d, d, rng, n("gru_uz"));
    gru_bz_ = Tensor::param_zeros({d}, n("gru_bz"));
    gru_wn_ = xavier(d, d, rng, n("gru_wn"));
    gru_un_ = xavier(d, d, rng, n("gru_un"));
    gru_bn_ = Tensor::param_zeros({d}, n("gru_bn"));
    recon_q_ = xavier(d, d, rng, n("recon_q"));
    recon_k_ = xavier(d, d, rng, n("recon_k"));
    recon_v_ = xavier(d, d, rng, n("recon_v"));
    if (cfg_.recon_mode == ReconMode::repeat_project) w_rp_ = xavier(d, d, rng, n("w_rp"));
    w_up_ = Tensor::param_zeros({d, D}, n("w_up"));
}

Tensor SlotAdapter::down_project(const Tensor& x) const {
    if (x.rank() != 3 || x.shape()[2] != cfg_.d_host)
        throw DimensionError("down_project: expected [T,N," + std::to_string(cfg_.d_host) + "], got " +
                             shape_str(x.shape()));
    return matmul(x, w_down_);
}

SlotAdapter::StepOut SlotAdapter::attention_step(const Tensor& slots, const Tensor& x_down) const {
    std::size_t H = cfg_.n_heads;
    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg_.d_head()));

    Tensor x_ln = layer_norm(x_down, ln_x_gain_, ln_x_bias_);
    Tensor s_ln = layer_norm(slots, ln_s_gain_, ln_s_bias_);
    Tensor q = matmul(s_ln, w_q_);   // [*, n_slots, d]
    Tensor k = matmul(x_ln, w_k_);   // [T, N, d]
    Tensor v = matmul(x_ln, w_v_);

    auto qh = split_axis(q, -1, H);
    auto kh = split_axis(k, -1, H);
    auto vh = split_axis(v, -1, H);

    std::vector<Tensor> zh;
    Tensor attn_sum, ahat_sum;
    for (std::size_t h = 0; h < H; ++h) {
        // M = K Q^T / sqrt(d_h): slots compete for each token via the
        // softmax over the slot axis.
        Tensor m = scale(matmul(kh[h], transpose_last2(qh[h])), inv_sqrt_dh);  // [T, N, n_slots]
        Tensor a = softmax_axis(m, -1);
        Tensor ahat = div_by_axis_sum(a, 1, cfg_.eps_token_norm);              // renorm over tokens
        zh.push_back(matmul(transpose_last2(ahat), vh[h]));                    // [T, n_slots, d_h]
        attn_sum = h == 0 ? a : add(attn_sum, a);
        ahat_sum = h == 0 ? ahat : add(ahat_sum, ahat);
    }
    Tensor z = concat_axis(zh, -1);   // [T, n_slots, d]

    // GRU(input=z, hidden=slots); `slots` broadcasts over T on iteration 1.
    Tensor r = sigmoid(add(add(matmul(z, gru_wr_), matmul(slots, gru_ur_)), gru_br_));
    Tensor u = sigmoid(add(add(matmul(z, gru_wz_), matmul(slots, gru_uz_)), gru_bz_));
    Tensor cand = vtg::tanh(add(add(matmul(z, gru_wn_), matmul(mul(r, slots), gru_un_)), gru_bn_));
    Tensor next = add(mul(add_scalar(scale(u, -1.0), 1.0), cand), mul(u, slots));

    StepOut out;
    out.slots = next;
    out.attn = scale(attn_sum, 1.0 / static_cast<double>(H));
    out.attn_hat = scale(ahat_sum, 1.0 / static_cast<double>(H));
    out.z = z;
    return out;
}

SlotAttentionOutput SlotAdapter::run_slot_attention(const Tensor& x_down) const {
    Tensor slots = s0_;
    StepOut step;
    for (std::size_t i = 0; i < cfg_.n_iters; ++i) {
        step = attention_step(slots, x_down);
        slots = step.slots;
    }
    SlotAttentionOutput out;
    out.slots = step.slots;
    out.attn = step.attn;
    out.attn_hat = step.attn_hat;
    return out;
}

Tensor SlotAdapter::reconstruct(const Tensor& x_down, const Tensor& slots) const {
    if (cfg_.recon_mode == ReconMode::repeat_project) {
        std::size_t T = x_down.shape()[0], N = x_down.shape()[1], d = cfg_.d;
        std::size_t ns = cfg_.n_slots;
        if (N % ns != 0)
            throw ConfigError("repeat_project needs N (" + std::to_string(N) +
                              ") divisible by n_slots (" + std::to_string(ns) + ")");
        std::size_t rep = N / ns;
        Tensor flat = reshape(slots, {T * ns, d});
        std::vector<std::size_t> index(T * N);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t n = 0; n < N; ++n) index[t * N + n] = t * ns + n / rep;
        return matmul(reshape(take_rows(flat, index), {T, N, d}), w_rp_);
    }
    // Single-head cross-attention: tokens query the slots.
    double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg_.d));
    Tensor q = matmul(layer_norm(x_down, ln_x_gain_, ln_x_bias_), recon_q_);
    Tensor s_ln = layer_norm(slots, ln_s_gain_, ln_s_bias_);
    Tensor k = matmul(s_ln, recon_k_);
    Tensor v = matmul(s_ln, recon_v_);
    Tensor attn = softmax_axis(scale(matmul(q, transpose_last2(k)), inv_sqrt_d), -1);  // [T, N, n_slots]
    return matmul(attn, v);
}

SlotAdapter::ForwardOut SlotAdapter::forward(const Tensor& x) const {
    Tensor x_down = down_project(x);
    SlotAttentionOutput so = run_slot_attention(x_down);
    Tensor xhat = reconstruct(x_down, so.slots);
    ForwardOut out;
    out.x_out = add(x, matmul(xhat, w_up_));
    out.slot_out = so;
    return out;
}

std::vector<Tensor> SlotAdapter::parameters() const {
    std::vector<Tensor> ps = {w_down_,  ln_x_gain_, ln_x_bias_, ln_s_gain_, ln_s_bias_, s0_,
                              w_q_,     w_k_,       w_v_,       gru_wr_,    gru_ur_,    gru_br_,
                              gru_wz_,  gru_uz_,    gru_bz_,    gru_wn_,    gru_un_,    gru_bn_,
                              recon_q_, recon_k_,   recon_v_};
    if (w_rp_.defined()) ps.push_back(w_rp_);
    ps.push_back(w_up_);
    return ps;
}

Tensor SlotAdapter::param(const std::string& suffix) const {
    for (const Tensor& p : parameters())
        if (p.name() == prefix_ + suffix) return p;
    throw ContractError("SlotAdapter: no parameter '" + prefix_ + suffix + "'");
}

SelfAttentionAdapter::SelfAttentionAdapter(AdapterConfig cfg, Rng& rng, std::string prefix) : cfg_(cfg) {
    cfg_.validate();
    auto n = [&prefix](const char* s) { return prefix + s; };
    std::size_t D = cfg_.d_host, d = cfg_.d;
    w_down_ = xavier(D, d, rng, n("w_down"));
    ln_gain_ = ones_param(d, n("ln_gain"));
    ln_bias_ = Tensor::param_zeros({d}, n("ln_bias"));
    w_q_ = xavier(d, d, rng, n("w_q"));
    w_k_ = xavier(d, d, rng, n("w_k"));
    w_v_ = xavier(d, d, rng, n("w_v"));
    w_up_ = Tensor::param_zeros({d, D}, n("w_up"));
}

Tensor SelfAttentionAdapter::forward(const Tensor& x) const {
    if (x.rank() != 3 || x.shape()[2] != cfg_.d_host)
        throw DimensionError("SelfAttentionAdapter: expected [T,N," + std::to_string(cfg_.d_host) +
                             "], got " + shape_str(x.shape()));
    double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg_.d));
    Tensor x_ln = layer_norm(matmul(x, w_down_), ln_gain_, ln_bias_);
    Tensor q = matmul(x_ln, w_q_);
    Tensor k = matmul(x_ln, w_k_);
    Tensor v = matmul(x_ln, w_v_);
    Tensor attn = softmax_axis(scale(matmul(q, transpose_last2(k)), inv_sqrt_d), -1);  // over tokens
    return add(x, matmul(matmul(attn, v), w_up_));
}

std::vector<Tensor> SelfAttentionAdapter::parameters() const {
    return {w_down_, ln_gain_, ln_bias_, w_q_, w_k_, w_v_, w_up_};
}

} // namespace vtg

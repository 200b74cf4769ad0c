#include <doctest.h>

#include <cmath>
#include <cstring>

#include "vtg/adapter.hpp"
#include "vtg/gradcheck.hpp"

using namespace vtg;

namespace {

AdapterConfig toy_cfg() {
    AdapterConfig cfg;
    cfg.d_host = 6;
    cfg.d = 4;
    cfg.n_slots = 2;
    cfg.n_iters = 2;
    cfg.n_heads = 2;
    return cfg;
}

Tensor rand_input(Shape s, Rng& rng) {
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = rng.normal();
    return Tensor::from_data(std::move(s), std::move(v));
}

void randomize(Tensor t, Rng& rng, double scl) {
    for (auto& x : t.mutable_data()) x = rng.normal(0.0, scl);
}

// Loop-oracle layer norm matching the library's eps.
std::vector<double> ln_rows(const std::vector<double>& x, std::size_t rows, std::size_t d,
                            const std::vector<double>& g, const std::vector<double>& b) {
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        double mu = 0, var = 0;
        for (std::size_t i = 0; i < d; ++i) mu += x[r * d + i];
        mu /= d;
        for (std::size_t i = 0; i < d; ++i) var += (x[r * d + i] - mu) * (x[r * d + i] - mu);
        var /= d;
        double is = 1.0 / std::sqrt(var + 1e-5);
        for (std::size_t i = 0; i < d; ++i) out[r * d + i] = g[i] * (x[r * d + i] - mu) * is + b[i];
    }
    return out;
}

std::vector<double> matmul_rows(const std::vector<double>& a, std::size_t m, std::size_t k,
                                const std::vector<double>& b, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l)
            for (std::size_t j = 0; j < n; ++j) c[i * n + j] += a[i * k + l] * b[l * n + j];
    return c;
}

} // namespace

TEST_SUITE("adapter") {

TEST_CASE("config validation names the offending field") {
    AdapterConfig bad = toy_cfg();
    bad.d = 5;   // not divisible by n_heads=2
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = toy_cfg();
    bad.n_slots = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = toy_cfg();
    bad.n_iters = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("down_project keeps the leading columns under a block-identity weight") {
    Rng rng(1);
    SlotAdapter ad(toy_cfg(), rng, "a.");
    // W_down = [I_d ; 0]: rows 0..d-1 identity, rest zero.
    Tensor w = ad.param("w_down");
    auto& wd = w.mutable_data();
    std::fill(wd.begin(), wd.end(), 0.0);
    for (std::size_t i = 0; i < 4; ++i) wd[i * 4 + i] = 1.0;
    Tensor x = rand_input({2, 3, 6}, rng);
    Tensor xd = ad.down_project(x);
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t n = 0; n < 3; ++n)
            for (std::size_t i = 0; i < 4; ++i)
                CHECK(xd.at((t * 3 + n) * 4 + i) == doctest::Approx(x.at((t * 3 + n) * 6 + i)));

    Tensor zero = Tensor::zeros({2, 3, 6});
    Tensor zd = ad.down_project(zero);
    for (std::size_t i = 0; i < zd.size(); ++i) CHECK(zd.at(i) == 0.0);
    CHECK_THROWS_AS(ad.down_project(Tensor::zeros({2, 3, 5})), DimensionError);
}

TEST_CASE("singleton slot: A is all ones, A-hat uniform, Z is the V column mean") {
    AdapterConfig cfg = toy_cfg();
    cfg.n_slots = 1;
    cfg.n_heads = 1;
    Rng rng(2);
    SlotAdapter ad(cfg, rng, "a.");
    Tensor x_down = rand_input({1, 4, 4}, rng);
    auto step = ad.attention_step(ad.param("s0"), x_down);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(step.attn.at(i) == doctest::Approx(1.0));
        CHECK(step.attn_hat.at(i) == doctest::Approx(0.25).epsilon(1e-6));
    }
    // Z = column mean of V: A-hat weights are 1/(N + eps_token_norm) each.
    Tensor x_ln = layer_norm(x_down, ad.param("ln_x_gain"), ad.param("ln_x_bias"));
    Tensor v = matmul(x_ln, ad.param("w_v"));
    for (std::size_t c = 0; c < 4; ++c) {
        double sum = 0.0;
        for (std::size_t n = 0; n < 4; ++n) sum += v.at(n * 4 + c);
        CHECK(step.z.at(c) == doctest::Approx(sum / (4.0 + cfg.eps_token_norm)).epsilon(1e-12));
    }
}

TEST_CASE("identical slot queries split each token 1/n_slots") {
    Rng rng(3);
    SlotAdapter ad(toy_cfg(), rng, "a.");
    Tensor s0 = ad.param("s0");
    for (std::size_t i = 0; i < 4; ++i) s0.mutable_data()[4 + i] = s0.at(i);
    Tensor x_down = rand_input({1, 5, 4}, rng);
    auto step = ad.attention_step(s0, x_down);
    for (std::size_t i = 0; i < step.attn.size(); ++i)
        CHECK(step.attn.at(i) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("attention step matches a brute-force loop oracle (T=1,N=4,N_s=2,H=1,d=2)") {
    AdapterConfig cfg;
    cfg.d_host = 3;
    cfg.d = 2;
    cfg.n_slots = 2;
    cfg.n_heads = 1;
    cfg.n_iters = 1;
    Rng rng(4);
    SlotAdapter ad(cfg, rng, "a.");
    Tensor x_down = rand_input({1, 4, 2}, rng);
    Tensor slots = ad.param("s0");
    auto step = ad.attention_step(slots, x_down);

    auto xl = ln_rows(x_down.data(), 4, 2, ad.param("ln_x_gain").data(), ad.param("ln_x_bias").data());
    auto sl = ln_rows(slots.data(), 2, 2, ad.param("ln_s_gain").data(), ad.param("ln_s_bias").data());
    auto q = matmul_rows(sl, 2, 2, ad.param("w_q").data(), 2);
    auto k = matmul_rows(xl, 4, 2, ad.param("w_k").data(), 2);
    auto v = matmul_rows(xl, 4, 2, ad.param("w_v").data(), 2);
    // M = K Q^T / sqrt(d_h); A = row softmax; A-hat = column renorm; Z = A-hat^T V.
    double m[4][2], a[4][2], ahat[4][2];
    for (int n = 0; n < 4; ++n) {
        for (int s = 0; s < 2; ++s) {
            m[n][s] = (k[n * 2] * q[s * 2] + k[n * 2 + 1] * q[s * 2 + 1]) / std::sqrt(2.0);
        }
        double mx = std::max(m[n][0], m[n][1]);
        double z0 = std::exp(m[n][0] - mx), z1 = std::exp(m[n][1] - mx);
        a[n][0] = z0 / (z0 + z1);
        a[n][1] = z1 / (z0 + z1);
    }
    for (int s = 0; s < 2; ++s) {
        double col = 0.0;
        for (int n = 0; n < 4; ++n) col += a[n][s];
        for (int n = 0; n < 4; ++n) ahat[n][s] = a[n][s] / (col + cfg.eps_token_norm);
    }
    double z[2][2] = {{0, 0}, {0, 0}};
    for (int s = 0; s < 2; ++s)
        for (int c = 0; c < 2; ++c)
            for (int n = 0; n < 4; ++n) z[s][c] += ahat[n][s] * v[n * 2 + c];

    for (int n = 0; n < 4; ++n)
        for (int s = 0; s < 2; ++s) {
            CHECK(step.attn.at(n * 2 + s) == doctest::Approx(a[n][s]).epsilon(1e-12));
            CHECK(step.attn_hat.at(n * 2 + s) == doctest::Approx(ahat[n][s]).epsilon(1e-12));
        }
    for (int s = 0; s < 2; ++s)
        for (int c = 0; c < 2; ++c) CHECK(step.z.at(s * 2 + c) == doctest::Approx(z[s][c]).epsilon(1e-12));
}

TEST_CASE("run_slot_attention with I=1 equals a single step") {
    AdapterConfig cfg = toy_cfg();
    cfg.n_iters = 1;
    Rng rng(5);
    SlotAdapter ad(cfg, rng, "a.");
    Tensor x = rand_input({2, 5, 6}, rng);
    Tensor xd = ad.down_project(x);
    auto full = ad.run_slot_attention(xd);
    auto step = ad.attention_step(ad.param("s0"), xd);
    for (std::size_t i = 0; i < full.attn.size(); ++i) CHECK(full.attn.at(i) == step.attn.at(i));
    for (std::size_t i = 0; i < full.slots.size(); ++i) CHECK(full.slots.at(i) == step.slots.at(i));
}

TEST_CASE("A rows and A-hat columns are normalized on random input") {
    Rng rng(6);
    SlotAdapter ad(toy_cfg(), rng, "a.");
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = rand_input({2, 7, 6}, rng);
        auto so = ad.run_slot_attention(ad.down_project(x));
        // Row sums over slots = 1.
        for (std::size_t t = 0; t < 2; ++t)
            for (std::size_t n = 0; n < 7; ++n) {
                double s = 0.0;
                for (std::size_t k = 0; k < 2; ++k) s += so.attn.at((t * 7 + n) * 2 + k);
                CHECK(std::abs(s - 1.0) < 1e-6);
            }
        // Column sums over tokens = 1 (up to eps_token_norm slack).
        for (std::size_t t = 0; t < 2; ++t)
            for (std::size_t k = 0; k < 2; ++k) {
                double s = 0.0;
                for (std::size_t n = 0; n < 7; ++n) s += so.attn_hat.at((t * 7 + n) * 2 + k);
                CHECK(std::abs(s - 1.0) < 1e-6);
            }
    }
}

TEST_CASE("permuting the slot queries permutes A columns and leaves X-hat unchanged") {
    AdapterConfig cfg = toy_cfg();
    cfg.n_slots = 3;
    cfg.n_heads = 2;
    Rng rng(7);
    SlotAdapter ad(cfg, rng, "a.");
    Tensor x = rand_input({2, 6, 6}, rng);
    Tensor xd = ad.down_project(x);
    auto before = ad.run_slot_attention(xd);
    Tensor xhat_before = ad.reconstruct(xd, before.slots);

    // Apply permutation (0,1,2) -> (2,0,1) to the s0 rows in place.
    std::vector<std::size_t> perm = {2, 0, 1};   // new row i = old row perm[i]
    Tensor s0 = ad.param("s0");
    std::vector<double> old = s0.data();
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 4; ++c) s0.mutable_data()[i * 4 + c] = old[perm[i] * 4 + c];

    auto after = ad.run_slot_attention(xd);
    Tensor xhat_after = ad.reconstruct(xd, after.slots);
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t n = 0; n < 6; ++n)
            for (std::size_t k = 0; k < 3; ++k)
                CHECK(after.attn.at((t * 6 + n) * 3 + k) ==
                      doctest::Approx(before.attn.at((t * 6 + n) * 3 + perm[k])).epsilon(1e-12));
    double max_diff = 0.0;
    for (std::size_t i = 0; i < xhat_before.size(); ++i)
        max_diff = std::max(max_diff, std::abs(xhat_before.at(i) - xhat_after.at(i)));
    CHECK(max_diff <= 1e-9);
}

TEST_CASE("per-frame locality: zeroing another frame leaves this frame's attention alone") {
    Rng rng(8);
    SlotAdapter ad(toy_cfg(), rng, "a.");
    Tensor x = rand_input({3, 4, 6}, rng);
    auto base = ad.run_slot_attention(ad.down_project(x));
    Tensor x2 = Tensor::from_data(x.shape(), x.data());
    for (std::size_t i = 0; i < 4 * 6; ++i) x2.mutable_data()[2 * 4 * 6 + i] = 0.0;
    auto poked = ad.run_slot_attention(ad.down_project(x2));
    for (std::size_t i = 0; i < 2 * 4 * 2; ++i)   // frames 0 and 1 only
        CHECK(base.attn.at(i) == poked.attn.at(i));
}

TEST_CASE("reconstruct: singleton slot gives identical rows per frame") {
    AdapterConfig cfg = toy_cfg();
    cfg.n_slots = 1;
    Rng rng(9);
    SlotAdapter ad(cfg, rng, "a.");
    Tensor x = rand_input({2, 5, 6}, rng);
    Tensor xd = ad.down_project(x);
    auto so = ad.run_slot_attention(xd);
    Tensor xhat = ad.reconstruct(xd, so.slots);
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t n = 1; n < 5; ++n)
            for (std::size_t c = 0; c < 4; ++c)
                CHECK(xhat.at((t * 5 + n) * 4 + c) == doctest::Approx(xhat.at(t * 5 * 4 + c)).epsilon(1e-12));
}

TEST_CASE("reconstruct: identical slots attend uniformly regardless of query") {
    Rng rng(10);
    SlotAdapter ad(toy_cfg(), rng, "a.");
    Tensor x = rand_input({1, 5, 6}, rng);
    Tensor xd = ad.down_project(x);
    // Slots with equal rows: X-hat = mean of per-slot values independently of tokens.
    std::vector<double> srow = {0.3, -0.8, 1.2, 0.05};
    std::vector<double> sdata;
    for (int s = 0; s < 2; ++s) sdata.insert(sdata.end(), srow.begin(), srow.end());
    Tensor slots = Tensor::from_data({1, 2, 4}, sdata);
    Tensor xhat = ad.reconstruct(xd, slots);
    Tensor s_ln = layer_norm(slots, ad.param("ln_s_gain"), ad.param("ln_s_bias"));
    Tensor v = matmul(s_ln, ad.param("recon_v"));
    for (std::size_t n = 0; n < 5; ++n)
        for (std::size_t c = 0; c < 4; ++c)
            CHECK(xhat.at(n * 4 + c) == doctest::Approx(0.5 * (v.at(c) + v.at(4 + c))).epsilon(1e-9));
}

TEST_CASE("reconstruct matches a brute-force cross-attention loop") {
    AdapterConfig cfg;
    cfg.d_host = 3;
    cfg.d = 2;
    cfg.n_slots = 2;
    cfg.n_heads = 1;
    Rng rng(11);
    SlotAdapter ad(cfg, rng, "a.");
    Tensor xd = rand_input({1, 3, 2}, rng);
    Tensor slots = rand_input({1, 2, 2}, rng);
    Tensor got = ad.reconstruct(xd, slots);

    auto ql = ln_rows(xd.data(), 3, 2, ad.param("ln_x_gain").data(), ad.param("ln_x_bias").data());
    auto sl = ln_rows(slots.data(), 2, 2, ad.param("ln_s_gain").data(), ad.param("ln_s_bias").data());
    auto q = matmul_rows(ql, 3, 2, ad.param("recon_q").data(), 2);
    auto k = matmul_rows(sl, 2, 2, ad.param("recon_k").data(), 2);
    auto v = matmul_rows(sl, 2, 2, ad.param("recon_v").data(), 2);
    for (int n = 0; n < 3; ++n) {
        double s0 = (q[n * 2] * k[0] + q[n * 2 + 1] * k[1]) / std::sqrt(2.0);
        double s1 = (q[n * 2] * k[2] + q[n * 2 + 1] * k[3]) / std::sqrt(2.0);
        double mx = std::max(s0, s1);
        double e0 = std::exp(s0 - mx), e1 = std::exp(s1 - mx);
        double a0 = e0 / (e0 + e1), a1 = e1 / (e0 + e1);
        for (int c = 0; c < 2; ++c)
            CHECK(got.at(n * 2 + c) == doctest::Approx(a0 * v[c] + a1 * v[2 + c]).epsilon(1e-12));
    }
}

TEST_CASE("repeat_project tiles slots in order and rejects indivisible N") {
    AdapterConfig cfg = toy_cfg();
    cfg.recon_mode = ReconMode::repeat_project;
    Rng rng(12);
    SlotAdapter ad(cfg, rng, "a.");
    // Identity projection exposes the raw tiling.
    Tensor wrp = ad.param("w_rp");
    std::fill(wrp.mutable_data().begin(), wrp.mutable_data().end(), 0.0);
    for (std::size_t i = 0; i < 4; ++i) wrp.mutable_data()[i * 4 + i] = 1.0;
    Tensor slots = rand_input({1, 2, 4}, rng);
    Tensor xd = rand_input({1, 4, 4}, rng);
    Tensor xhat = ad.reconstruct(xd, slots);
    for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t c = 0; c < 4; ++c)
            CHECK(xhat.at(n * 4 + c) == slots.at((n / 2) * 4 + c));
    Tensor xd5 = rand_input({1, 5, 4}, rng);
    CHECK_THROWS_AS(ad.reconstruct(xd5, slots), ConfigError);
}

TEST_CASE("identity at initialization is bit-exact") {
    Rng rng(13);
    SlotAdapter ad(toy_cfg(), rng, "a.");
    Tensor x = rand_input({2, 4, 6}, rng);
    auto out = ad.forward(x);
    CHECK(std::memcmp(out.x_out.data().data(), x.data().data(), x.size() * sizeof(double)) == 0);
}

TEST_CASE("zero reconstruction keeps the input even with nonzero W_up") {
    Rng rng(14);
    SlotAdapter ad(toy_cfg(), rng, "a.");
    randomize(ad.param("w_up"), rng, 0.5);
    Tensor rv = ad.param("recon_v");
    std::fill(rv.mutable_data().begin(), rv.mutable_data().end(), 0.0);
    Tensor x = rand_input({2, 4, 6}, rng);
    auto out = ad.forward(x);
    CHECK(std::memcmp(out.x_out.data().data(), x.data().data(), x.size() * sizeof(double)) == 0);
}

TEST_CASE("end-to-end adapter gradients match finite differences") {
    Rng rng(15);
    SlotAdapter ad(toy_cfg(), rng, "a.");
    // W_up = 0 blocks every upstream gradient; randomize it so the whole
    // slot-attention path carries signal.
    randomize(ad.param("w_up"), rng, 0.3);
    Tensor x = rand_input({2, 3, 6}, rng);
    Tensor w = rand_input({2, 3, 6}, rng);
    auto loss_fn = [&] {
        auto out = ad.forward(x);
        return sum_all(mul(out.x_out, w));
    };
    auto rep = grad_check(loss_fn, ad.parameters(), 1e-5, 1e-3);
    INFO("worst: ", rep.worst, " ad=", rep.analytic, " fd=", rep.numeric);
    CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("self-attention ablation adapter: identity at init and clean gradients") {
    AdapterConfig cfg = toy_cfg();
    Rng rng(16);
    SelfAttentionAdapter ad(cfg, rng, "sa.");
    Tensor x = rand_input({2, 4, 6}, rng);
    Tensor y = ad.forward(x);
    CHECK(std::memcmp(y.data().data(), x.data().data(), x.size() * sizeof(double)) == 0);

    for (Tensor& p : ad.parameters())
        if (p.name() == "sa.w_up") randomize(p, rng, 0.3);
    Tensor w = rand_input({2, 4, 6}, rng);
    auto loss_fn = [&] { return sum_all(mul(ad.forward(x), w)); };
    auto rep = grad_check(loss_fn, ad.parameters(), 1e-5, 1e-3);
    CHECK(rep.max_rel_err <= 1e-4);
}

} // TEST_SUITE

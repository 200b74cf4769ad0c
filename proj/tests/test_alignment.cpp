#include <doctest.h>

#include <cmath>

#include "vtg/alignment.hpp"
#include "vtg/gradcheck.hpp"

using namespace vtg;

namespace {

Tensor rand_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(s), std::move(v));
}

} // namespace

TEST_SUITE("alignment") {

TEST_CASE("slot_similarity: same slot -> 1, different slots -> -1") {
    // Tokens 0,1 one-hot on slot 0; token 2 on slot 1.
    Tensor attn = Tensor::from_data({1, 3, 2}, {1, 0, 1, 0, 0, 1});
    Tensor m = slot_similarity(attn);
    CHECK(m.at(0 * 3 + 1) == doctest::Approx(1.0));    // (0,1) same slot
    CHECK(m.at(0 * 3 + 2) == doctest::Approx(-1.0));   // (0,2) different
    CHECK(m.at(1 * 3 + 2) == doctest::Approx(-1.0));
}

TEST_CASE("slot_similarity invariants on random attention") {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor logits = rand_tensor({2, 5, 3}, rng, -2.0, 2.0);
        Tensor attn = softmax_axis(logits, -1);
        Tensor m = slot_similarity(attn);
        for (std::size_t t = 0; t < 2; ++t)
            for (std::size_t i = 0; i < 5; ++i) {
                CHECK(std::abs(m.at((t * 5 + i) * 5 + i) - 1.0) < 1e-6);   // unit diagonal
                for (std::size_t j = 0; j < 5; ++j) {
                    double v = m.at((t * 5 + i) * 5 + j);
                    CHECK(std::abs(v - m.at((t * 5 + j) * 5 + i)) < 1e-9); // symmetry
                    CHECK(v <= 1.0 + 1e-9);
                    CHECK(v >= -1.0 - 1e-9);
                }
            }
    }
}

TEST_CASE("slot_similarity is invariant to permuting slot columns") {
    Rng rng(22);
    Tensor attn = softmax_axis(rand_tensor({1, 4, 3}, rng), -1);
    // Columns (0,1,2) -> (2,0,1).
    std::vector<double> perm(attn.size());
    for (std::size_t n = 0; n < 4; ++n) {
        perm[n * 3 + 0] = attn.at(n * 3 + 2);
        perm[n * 3 + 1] = attn.at(n * 3 + 0);
        perm[n * 3 + 2] = attn.at(n * 3 + 1);
    }
    Tensor m1 = slot_similarity(attn);
    Tensor m2 = slot_similarity(Tensor::from_data({1, 4, 3}, perm));
    for (std::size_t i = 0; i < m1.size(); ++i) CHECK(m1.at(i) == doctest::Approx(m2.at(i)).epsilon(1e-12));
}

TEST_CASE("feature_affinity: identical and orthogonal rows") {
    Tensor same = Tensor::from_data({1, 2, 3}, {1, 2, 2, 1, 2, 2});
    Tensor m = feature_affinity(same);
    for (std::size_t i = 0; i < 4; ++i) CHECK(m.at(i) == doctest::Approx(1.0));

    Tensor ortho = Tensor::from_data({1, 2, 2}, {1, 0, 0, 5});
    Tensor mo = feature_affinity(ortho);
    CHECK(mo.at(1) == doctest::Approx(0.0));
    CHECK(mo.at(2) == doctest::Approx(0.0));
}

TEST_CASE("feature_affinity matches a cosine loop oracle on random 1x8x4") {
    Rng rng(23);
    Tensor f = rand_tensor({1, 8, 4}, rng);
    Tensor m = feature_affinity(f);
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j) {
            double dot = 0, ni = 0, nj = 0;
            for (std::size_t c = 0; c < 4; ++c) {
                double a = f.at(i * 4 + c), b = f.at(j * 4 + c);
                dot += a * b;
                ni += a * a;
                nj += b * b;
            }
            double expect = dot / (std::sqrt(ni) * std::sqrt(nj));
            CHECK(m.at(i * 8 + j) == doctest::Approx(expect).epsilon(1e-9));
        }
}

TEST_CASE("sa_loss extremes and hand value") {
    Rng rng(24);
    Tensor attn = softmax_axis(rand_tensor({3, 4, 2}, rng), -1);
    Tensor m = slot_similarity(attn);
    CHECK(sa_loss(m, m).value() <= 1e-12);
    CHECK(sa_loss(m, scale(m, -1.0)).value() == doctest::Approx(2.0));

    // Random 1x2x2 pair against a flatten-and-dot oracle.
    Tensor a = rand_tensor({1, 2, 2}, rng);
    Tensor b = rand_tensor({1, 2, 2}, rng);
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        dot += a.at(i) * b.at(i);
        na += a.at(i) * a.at(i);
        nb += b.at(i) * b.at(i);
    }
    double expect = 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
    CHECK(sa_loss(a, b).value() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("sa_loss stays in [0,2] and a zero-norm frame contributes 1") {
    Rng rng(25);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor a = rand_tensor({2, 3, 3}, rng);
        Tensor b = rand_tensor({2, 3, 3}, rng);
        double v = sa_loss(a, b).value();
        CHECK(v >= 0.0);
        CHECK(v <= 2.0);
    }
    Tensor zero = Tensor::zeros({1, 2, 2});
    Tensor any = rand_tensor({1, 2, 2}, rng);
    CHECK(sa_loss(zero, any).value() == doctest::Approx(1.0));
}

TEST_CASE("mask_diagonal drops the fixed unit diagonal from the comparison") {
    // Off-diagonal equal, diagonals differ: masked loss ~0, unmasked > 0.
    Tensor a = Tensor::from_data({1, 2, 2}, {1.0, 0.5, 0.5, 1.0});
    Tensor b = Tensor::from_data({1, 2, 2}, {-1.0, 0.5, 0.5, -1.0});
    CHECK(sa_loss(a, b, true).value() <= 1e-12);
    CHECK(sa_loss(a, b, false).value() > 0.1);
}

TEST_CASE("total_loss arithmetic") {
    Tensor ce = Tensor::scalar(1.0);
    Tensor sa = Tensor::scalar(2.0);
    CHECK(total_loss(ce, sa, 0.1).value() == doctest::Approx(1.2));
    CHECK(total_loss(ce, sa, 0.0).value() == doctest::Approx(1.0));
    CHECK_THROWS_AS(total_loss(ce, sa, -0.1), ValueError);
}

TEST_CASE("gradient flows into both loss terms") {
    Tensor p = Tensor::param({}, {0.5}, "p");
    Tensor q = Tensor::param({}, {0.25}, "q");
    Tensor total = total_loss(mul(p, p), mul(q, q), 0.1);
    backward(total);
    CHECK(p.grad()[0] == doctest::Approx(1.0));
    CHECK(q.grad()[0] == doctest::Approx(0.05));
}

TEST_CASE("finite differences through slot_similarity + sa_loss") {
    Rng rng(26);
    std::vector<double> lv(1 * 4 * 3);
    for (auto& x : lv) x = rng.uniform(-1.5, 1.5);
    Tensor logits = Tensor::param({1, 4, 3}, lv, "logits");
    Tensor target = feature_affinity(rand_tensor({1, 4, 5}, rng)).detach();
    auto loss_fn = [&] { return sa_loss(slot_similarity(softmax_axis(logits, -1)), target); };
    auto rep = grad_check(loss_fn, {logits}, 1e-5, 1e-2);
    CHECK(rep.max_rel_err <= 1e-4);
}

} // TEST_SUITE

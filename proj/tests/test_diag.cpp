#include <doctest.h>

#include <cmath>
#include <vector>

#include "vtg/diag.hpp"
#include "vtg/rng.hpp"

using namespace vtg;

namespace {

ReprSet gaussian_set(Rng& rng, std::size_t n, std::size_t d, double mean_shift = 0.0) {
    ReprSet s;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> v(d);
        for (auto& x : v) x = rng.normal() + mean_shift;
        s.vectors.push_back(std::move(v));
    }
    return s;
}

// A sample whose GT covers frames [a, b] of T frames at 0.5s spacing.
VideoSample span_sample(std::uint64_t seed, std::size_t T, std::size_t a, std::size_t b,
                        std::size_t N = 2, std::size_t D = 3) {
    Rng rng(seed);
    VideoSample s;
    s.sample_id = seed;
    std::vector<double> f(T * N * D);
    for (auto& x : f) x = rng.normal();
    s.frames = Tensor::from_data({T, N, D}, std::move(f));
    for (std::size_t t = 0; t < T; ++t) s.times.push_back(0.5 * static_cast<double>(t));
    s.query = {20};
    s.gt_window = {s.times[a], s.times[b]};
    return s;
}

// Index range of frames whose features differ between two samples.
std::vector<std::size_t> changed_frames(const VideoSample& x, const VideoSample& y) {
    std::size_t T = x.frames.shape()[0];
    std::size_t per = x.frames.shape()[1] * x.frames.shape()[2];
    std::vector<std::size_t> out;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < per; ++i) {
            if (x.frames.at(t * per + i) != y.frames.at(t * per + i)) {
                out.push_back(t);
                break;
            }
        }
    }
    return out;
}

} // namespace

TEST_SUITE("diag") {

TEST_CASE("pool_video_repr") {
    SUBCASE("constant hidden pools to that constant") {
        Tensor h = Tensor::full({2, 3, 4}, 1.25);
        std::vector<double> p = pool_video_repr(h);
        REQUIRE(p.size() == 4);
        for (double x : p) CHECK(x == 1.25);
    }
    SUBCASE("v and -v pool to zero") {
        Tensor h = Tensor::from_data({1, 2, 3}, {1.0, -2.0, 3.5, -1.0, 2.0, -3.5});
        for (double x : pool_video_repr(h)) CHECK(x == 0.0);
    }
    SUBCASE("matches a loop oracle") {
        Rng rng(7);
        std::vector<double> v(2 * 4 * 5);
        for (auto& x : v) x = rng.normal();
        Tensor h = Tensor::from_data({2, 4, 5}, std::vector<double>(v));
        std::vector<double> p = pool_video_repr(h);
        for (std::size_t j = 0; j < 5; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < 8; ++r) s += v[r * 5 + j];
            CHECK(p[j] == doctest::Approx(s / 8.0).epsilon(1e-12));
        }
    }
    SUBCASE("rejects bad input") {
        CHECK_THROWS_AS(pool_video_repr(Tensor()), ValueError);
        CHECK_THROWS_AS(pool_video_repr(Tensor::zeros({3, 4})), DimensionError);
    }
}

TEST_CASE("mmd2 of a set against itself is exactly zero (biased)") {
    Rng rng(11);
    ReprSet x = gaussian_set(rng, 20, 6);
    ReprSet y = x;
    Mmd2Result r = mmd2_biased(x, y);
    CHECK(r.raw == 0.0);
    CHECK(r.value == 0.0);
    CHECK_FALSE(r.bandwidth_fallback);
}

TEST_CASE("mmd2 near zero for same-distribution draws") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(100 + seed);
        ReprSet x = gaussian_set(rng, 200, 8);
        ReprSet y = gaussian_set(rng, 200, 8);
        Mmd2Result r = mmd2(x, y);
        CHECK(std::abs(r.raw) <= 0.02);
    }
}

TEST_CASE("mmd2 detects a one-sigma mean shift") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(200 + seed);
        ReprSet x = gaussian_set(rng, 200, 8);
        ReprSet y = gaussian_set(rng, 200, 8, 1.0);
        Mmd2Result r = mmd2(x, y);
        CHECK(r.value >= 0.1);
    }
}

TEST_CASE("mmd2 symmetry and permutation invariance") {
    Rng rng(13);
    ReprSet x = gaussian_set(rng, 12, 4);
    ReprSet y = gaussian_set(rng, 9, 4, 0.3);
    Mmd2Result xy = mmd2(x, y), yx = mmd2(y, x);
    CHECK(xy.raw == yx.raw);
    CHECK(xy.bandwidth == yx.bandwidth);

    ReprSet xp = x;
    std::rotate(xp.vectors.begin(), xp.vectors.begin() + 5, xp.vectors.end());
    Mmd2Result rp = mmd2(xp, y);
    CHECK(rp.raw == xy.raw);   // term sums are order-canonicalized, so exact
}

TEST_CASE("mmd2 degenerate set falls back to unit bandwidth") {
    ReprSet x;
    for (int i = 0; i < 4; ++i) x.vectors.push_back({2.0, 2.0});
    Mmd2Result r = mmd2(x, x);
    CHECK(r.bandwidth_fallback);
    CHECK(r.bandwidth == 1.0);
    CHECK(r.raw == 0.0);
}

TEST_CASE("mmd2 input validation") {
    Rng rng(14);
    ReprSet x = gaussian_set(rng, 5, 3);
    ReprSet tiny = gaussian_set(rng, 1, 3);
    ReprSet wide = gaussian_set(rng, 5, 4);
    ReprSet empty;
    CHECK_THROWS_AS(mmd2(x, tiny), ValueError);
    CHECK_THROWS_AS(mmd2(x, empty), ValueError);
    CHECK_THROWS_AS(mmd2(x, wide), DimensionError);
    CHECK_NOTHROW(mmd2_biased(x, tiny));   // biased form allows singletons
    ReprSet bad = x;
    bad.vectors[2][1] = std::nan("");
    CHECK_THROWS_AS(mmd2(x, bad), ValueError);
}

TEST_CASE("simrank scores match a brute-force loop") {
    Rng rng(15);
    ReprSet train = gaussian_set(rng, 8, 5);
    ReprSet test = gaussian_set(rng, 10, 5);
    SimrankSplit sp = simrank_split(train, test, 0.2);
    REQUIRE(sp.scores.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        double best = -1.0;
        for (std::size_t j = 0; j < 8; ++j) {
            double dot = 0.0, na = 0.0, nb = 0.0;
            for (std::size_t c = 0; c < 5; ++c) {
                dot += test.vectors[i][c] * train.vectors[j][c];
                na += test.vectors[i][c] * test.vectors[i][c];
                nb += train.vectors[j][c] * train.vectors[j][c];
            }
            best = std::max(best, dot / std::sqrt(na * nb));
        }
        CHECK(sp.scores[i] == doctest::Approx(best).epsilon(1e-12));
    }
    CHECK(sp.top.size() == 2);
    CHECK(sp.bottom.size() == 2);
    for (std::size_t t : sp.top)
        for (std::size_t b : sp.bottom) CHECK(t != b);
}

TEST_CASE("simrank places an exact training copy in the top set") {
    Rng rng(16);
    ReprSet train = gaussian_set(rng, 6, 4);
    ReprSet test = gaussian_set(rng, 9, 4, 5.0);   // far from training
    test.vectors.push_back(train.vectors[3]);      // id 9: exact copy
    SimrankSplit sp = simrank_split(train, test, 0.1);
    CHECK(sp.scores[9] == doctest::Approx(1.0).epsilon(1e-12));
    REQUIRE(sp.top.size() == 1);
    CHECK(sp.top[0] == 9);
}

TEST_CASE("simrank tie-break and validation") {
    ReprSet train;
    train.vectors.push_back({1.0, 0.0});
    ReprSet test;
    for (int i = 0; i < 4; ++i) test.vectors.push_back({1.0, 0.0});   // all score 1
    SimrankSplit sp = simrank_split(train, test, 0.5);
    CHECK(sp.top == std::vector<std::size_t>{0, 1});
    CHECK(sp.bottom == std::vector<std::size_t>{0, 1} );   // ties: lowest ids both ways

    CHECK_THROWS_AS(simrank_split(train, test, 0.0), ValueError);
    CHECK_THROWS_AS(simrank_split(train, test, 0.6), ValueError);
    CHECK_THROWS_AS(simrank_split(ReprSet{}, test, 0.2), ValueError);
    CHECK_THROWS_AS(simrank_split(train, test, 0.05), ValueError);   // selects zero ids
}

TEST_CASE("perturb_sample noises exactly the chosen frames") {
    VideoSample s = span_sample(21, 8, 2, 4);
    PerturbSpec spec;
    spec.noise_scale = 1.0;
    spec.seed = 5;

    SUBCASE("gt mode hits the GT span") {
        bool warn = false;
        VideoSample p = perturb_sample(s, spec, &warn);
        CHECK_FALSE(warn);
        CHECK(changed_frames(s, p) == std::vector<std::size_t>{2, 3, 4});
        CHECK(p.gt_window.start == s.gt_window.start);   // metadata untouched

        // Same seed reproduces the same bytes; another seed differs.
        VideoSample p2 = perturb_sample(s, spec, &warn);
        CHECK(p.frames.data() == p2.frames.data());
        PerturbSpec other = spec;
        other.seed = 6;
        CHECK(perturb_sample(s, other, &warn).frames.data() != p.frames.data());
    }

    SUBCASE("random mode avoids the GT span and keeps its length") {
        spec.mode = PerturbSpec::Mode::random_window;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            spec.seed = seed;
            bool warn = false;
            VideoSample p = perturb_sample(s, spec, &warn);
            CHECK_FALSE(warn);
            std::vector<std::size_t> ch = changed_frames(s, p);
            REQUIRE(ch.size() == 3);
            CHECK(ch[2] - ch[0] == 2);                // contiguous
            CHECK((ch[2] < 2 || ch[0] > 4));          // disjoint from GT [2,4]
        }
    }

    SUBCASE("random mode warns when the GT spans everything") {
        VideoSample full = span_sample(22, 6, 0, 5);
        spec.mode = PerturbSpec::Mode::random_window;
        bool warn = false;
        VideoSample p = perturb_sample(full, spec, &warn);
        CHECK(warn);
        CHECK(changed_frames(full, p).size() == 6);
    }

    SUBCASE("zero noise scale is a no-op") {
        spec.noise_scale = 0.0;
        bool warn = false;
        VideoSample p = perturb_sample(s, spec, &warn);
        CHECK(p.frames.data() == s.frames.data());
    }
}

TEST_CASE("perturb_eval drops and conventions") {
    // Model that answers correctly iff the GT-span features are untouched.
    std::vector<VideoSample> samples;
    for (std::uint64_t i = 0; i < 6; ++i) {
        VideoSample s = span_sample(30 + i, 8, 2, 4);
        s.sample_id = i;
        samples.push_back(s);
    }
    auto originals = samples;
    auto gt_sensitive = [&originals](const VideoSample& s) -> Prediction {
        const VideoSample& o = originals[s.sample_id];
        std::size_t per = o.frames.shape()[1] * o.frames.shape()[2];
        for (std::size_t t = 2; t <= 4; ++t)
            for (std::size_t i = 0; i < per; ++i)
                if (s.frames.at(t * per + i) != o.frames.at(t * per + i)) return Window{0.0, 0.1};
        return o.gt_window;
    };

    PerturbSpec spec;
    spec.seed = 3;

    SUBCASE("gt-window noise breaks a gt-sensitive model") {
        PerturbResult r = perturb_eval(gt_sensitive, samples, spec);
        CHECK(r.clean == 1.0);
        CHECK(r.perturbed == 0.0);
        CHECK(r.drop == 1.0);
    }
    SUBCASE("random-window noise leaves it intact") {
        spec.mode = PerturbSpec::Mode::random_window;
        PerturbResult r = perturb_eval(gt_sensitive, samples, spec);
        CHECK(r.clean == 1.0);
        CHECK(r.perturbed == 1.0);
        CHECK(r.drop == 0.0);
        CHECK_FALSE(r.overlap_warning);
    }
    SUBCASE("zero scale keeps the metrics equal") {
        spec.noise_scale = 0.0;
        PerturbResult r = perturb_eval(gt_sensitive, samples, spec);
        CHECK(r.clean == r.perturbed);
        CHECK(r.drop == 0.0);
    }
    SUBCASE("clean = 0 reports drop 0") {
        auto always_wrong = [](const VideoSample&) -> Prediction { return Window{0.0, 0.05}; };
        PerturbResult r = perturb_eval(always_wrong, samples, spec);
        CHECK(r.clean == 0.0);
        CHECK(r.drop == 0.0);
    }
    SUBCASE("parse failures count as misses") {
        auto failing = [](const VideoSample&) -> Prediction { return std::nullopt; };
        PerturbResult r = perturb_eval(failing, samples, spec);
        CHECK(r.clean == 0.0);
        CHECK(r.perturbed == 0.0);
    }
    CHECK_THROWS_AS(perturb_eval(gt_sensitive, {}, spec), ValueError);
}

} // TEST_SUITE

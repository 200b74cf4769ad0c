#include <doctest.h>

#include <string>
#include <vector>

#include "vtg/rng.hpp"
#include "vtg/vocab.hpp"

using namespace vtg;

TEST_SUITE("vocab") {

TEST_CASE("fixed symbol table layout") {
    Vocab v;
    CHECK(v.size() == 36);
    CHECK(Vocab::PAD == 0);
    CHECK(Vocab::BOS == 1);
    CHECK(Vocab::EOS == 2);
    CHECK(Vocab::VIS == 3);
    CHECK(v.symbol(4) == "0");
    CHECK(v.symbol(13) == "9");
    CHECK(v.symbol(14) == ".");
    CHECK(v.symbol(15) == "s");
    CHECK(v.symbol(16) == ",");
    CHECK(v.symbol(17) == "[");
    CHECK(v.symbol(18) == "]");
    CHECK(v.symbol(19) == " ");
    CHECK(v.query_word_id(0) == 20);
    CHECK(v.query_word_id(15) == 35);
    CHECK(v.symbol(20) == "q0");
    CHECK(v.symbol(35) == "q15");
    CHECK_THROWS_AS(v.query_word_id(16), ValueError);
    CHECK_THROWS_AS(v.symbol(36), ValueError);
    CHECK_THROWS_AS(v.symbol(-1), ValueError);
}

TEST_CASE("encode longest match") {
    Vocab v;
    CHECK(v.encode("q1") == std::vector<int>{21});
    // "q15" must be one token, not q1 followed by 5.
    CHECK(v.encode("q15") == std::vector<int>{35});
    CHECK(v.encode("q15q2") == std::vector<int>{35, 22});
    CHECK(v.encode("2.5s") == std::vector<int>{6, 14, 9, 15});
    CHECK(v.encode("[0.5s, 2.0s]") ==
          std::vector<int>{17, 4, 14, 9, 15, 16, 19, 6, 14, 4, 15, 18});
    CHECK_THROWS_AS(v.encode("hello"), ValueError);
    CHECK_THROWS_AS(v.encode("q1x"), ValueError);
    CHECK(v.encode("").empty());
}

TEST_CASE("decode drops control ids and inverts encode") {
    Vocab v;
    std::string text = "[12.3s, 45.6s] q7";
    CHECK(v.decode(v.encode(text)) == text);
    std::vector<int> with_controls = {Vocab::BOS, 6, 14, 9, 15, Vocab::VIS, Vocab::EOS, Vocab::PAD};
    CHECK(v.decode(with_controls) == "2.5s");
    CHECK_THROWS_AS(v.decode({99}), ValueError);
}

TEST_CASE("format_seconds pins") {
    CHECK(format_seconds(2.5) == "2.5s");
    CHECK(format_seconds(0.0) == "0.0s");
    CHECK(format_seconds(12.34) == "12.3s");
    CHECK(format_seconds(3.14159) == "3.1s");
    CHECK(format_seconds(9.99) == "10.0s");
    CHECK(format_seconds(123.0) == "123.0s");
    // Exactly-representable halves round to even tenths.
    CHECK(format_seconds(0.25) == "0.2s");
    CHECK(format_seconds(0.75) == "0.8s");
    CHECK_THROWS_AS(format_seconds(-0.1), ValueError);
    CHECK_THROWS_AS(format_seconds(std::nan("")), ValueError);
}

TEST_CASE("tokenize_timestamp") {
    Vocab v;
    CHECK(tokenize_timestamp(2.5, v) == std::vector<int>{6, 14, 9, 15});
    CHECK(tokenize_timestamp(0.0, v) == std::vector<int>{4, 14, 4, 15});
}

TEST_CASE("render_window") {
    CHECK(render_window({0.5, 2.0}) == "[0.5s, 2.0s]");
    CHECK(render_window({12.34, 45.0}) == "[12.3s, 45.0s]");
}

TEST_CASE("parse_window accepts its own rendering") {
    SUBCASE("hand example") {
        ParsedWindow p = parse_window("[0.5s, 2.0s]");
        REQUIRE(p.ok);
        CHECK(p.window.start == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(p.window.end == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(p.reason.empty());
    }
    SUBCASE("multi digit") {
        ParsedWindow p = parse_window("[12.3s, 45.6s]");
        REQUIRE(p.ok);
        CHECK(p.window.start == doctest::Approx(12.3).epsilon(1e-12));
        CHECK(p.window.end == doctest::Approx(45.6).epsilon(1e-12));
    }
    SUBCASE("round trip property") {
        Rng rng(21);
        for (int i = 0; i < 300; ++i) {
            Window w{rng.uniform(0.0, 500.0), 0.0};
            w.end = w.start + rng.uniform(0.0, 100.0);
            std::string text = render_window(w);
            ParsedWindow p = parse_window(text);
            REQUIRE(p.ok);
            CHECK(render_window(p.window) == text);
        }
    }
}

TEST_CASE("parse_window rejects malformed text") {
    auto reason_of = [](const std::string& s) {
        ParsedWindow p = parse_window(s);
        CHECK_FALSE(p.ok);
        return p.reason;
    };
    CHECK(reason_of("") == "missing '['");
    CHECK(reason_of("0.5s, 2.0s]") == "missing '['");
    CHECK(reason_of("[0.5s,2.0s]") == "missing ', ' separator");
    CHECK(reason_of("[0.5s, 2.0s] ") == "trailing characters");
    CHECK(reason_of("[0.5, 2.0s]") == "missing 's' after start");
    CHECK(reason_of("[0.5s, 2.0]") == "missing 's' after end");
    CHECK(reason_of("[5s, 2.0s]") == "bad start time");
    CHECK(reason_of("[0.55s, 2.0s]") == "missing 's' after start");
    CHECK(reason_of("[0.5s, 2.0s") == "missing ']'");
    CHECK(reason_of("[q1, 2.0s]") == "bad start time");
}

TEST_CASE("parse_window inverted endpoints") {
    ParsedWindow strict = parse_window("[2.0s, 0.5s]");
    CHECK_FALSE(strict.ok);
    CHECK(strict.reason == "start > end");

    ParsedWindow clamped = parse_window("[2.0s, 0.5s]", true);
    REQUIRE(clamped.ok);
    CHECK(clamped.window.start == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(clamped.window.end == doctest::Approx(2.0).epsilon(1e-12));

    // Equal endpoints are a valid point window either way.
    CHECK(parse_window("[1.5s, 1.5s]").ok);
}

} // TEST_SUITE

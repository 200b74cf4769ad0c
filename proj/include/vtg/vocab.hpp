#pragma once

#include <string>
#include <vector>

#include "vtg/errors.hpp"
#include "vtg/metrics.hpp"

namespace vtg {

enum class TokenKind { VISUAL, TIMESTAMP, QUERY, TARGET };

// Closed symbol set for the synthetic grounding task: control tokens,
// timestamp characters, window punctuation, and a small query-word pool.
class Vocab {
public:
    static constexpr int PAD = 0;
    static constexpr int BOS = 1;
    static constexpr int EOS = 2;
    static constexpr int VIS = 3;           // placeholder id at VISUAL positions
    static constexpr std::size_t n_query_words = 16;

    Vocab();

    std::size_t size() const { return symbols_.size(); }
    int query_word_id(std::size_t w) const;          // w in [0, n_query_words)
    const std::string& symbol(int id) const;

    // Greedy longest-match over the symbol table; unknown text -> ValueError.
    std::vector<int> encode(const std::string& text) const;
    // Inverse of encode on textual ids; control ids contribute nothing.
    std::string decode(const std::vector<int>& ids) const;

private:
    std::vector<std::string> symbols_;
};

// One-decimal fixed format with round-half-even, e.g. 2.5 -> "2.5s".
std::string format_seconds(double seconds);
std::vector<int> tokenize_timestamp(double seconds, const Vocab& vocab);

// "[X.Xs, Y.Ys]" rendering of a window.
std::string render_window(const Window& w);

struct ParsedWindow {
    bool ok = false;
    Window window;
    std::string reason;   // set when !ok
};

// Strict parse of the render_window format.  Inverted windows fail unless
// clamp_inverted, which swaps the endpoints.
ParsedWindow parse_window(const std::string& text, bool clamp_inverted = false);

} // namespace vtg

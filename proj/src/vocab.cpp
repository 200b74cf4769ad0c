#include "vtg/vocab.hpp"

#include <cmath>

namespace vtg {

Vocab::Vocab() {
    symbols_ = {"<pad>", "<bos>", "<eos>", "<vis>"};
    for (char c = '0'; c <= '9'; ++c) symbols_.emplace_back(1, c);
    symbols_.emplace_back(".");
    symbols_.emplace_back("s");
    symbols_.emplace_back(",");
    symbols_.emplace_back("[");
    symbols_.emplace_back("]");
    symbols_.emplace_back(" ");
    for (std::size_t w = 0; w < n_query_words; ++w) symbols_.push_back("q" + std::to_string(w));
}

int Vocab::query_word_id(std::size_t w) const {
    if (w >= n_query_words) throw ValueError("query word " + std::to_string(w) + " out of pool");
    return static_cast<int>(size() - n_query_words + w);
}

const std::string& Vocab::symbol(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size())
        throw ValueError("token id " + std::to_string(id) + " out of vocabulary");
    return symbols_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const std::string& text) const {
    std::vector<int> ids;
    std::size_t pos = 0;
    while (pos < text.size()) {
        int best = -1;
        std::size_t best_len = 0;
        for (std::size_t id = VIS + 1; id < symbols_.size(); ++id) {
            const std::string& sym = symbols_[id];
            if (sym.size() > best_len && text.compare(pos, sym.size(), sym) == 0) {
                best = static_cast<int>(id);
                best_len = sym.size();
            }
        }
        if (best < 0)
            throw ValueError("cannot encode text at position " + std::to_string(pos) + ": '" + text + "'");
        ids.push_back(best);
        pos += best_len;
    }
    return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id == PAD || id == BOS || id == EOS || id == VIS) continue;
        out += symbol(id);
    }
    return out;
}

std::string format_seconds(double seconds) {
    if (!std::isfinite(seconds) || seconds < 0.0)
        throw ValueError("timestamp must be finite and non-negative, got " + std::to_string(seconds));
    // Round to tenths with the default round-half-even mode, then print the
    // integer and tenth digits directly so no further rounding can occur.
    long long tenths = static_cast<long long>(std::nearbyint(seconds * 10.0));
    return std::to_string(tenths / 10) + "." + std::to_string(tenths % 10) + "s";
}

std::vector<int> tokenize_timestamp(double seconds, const Vocab& vocab) {
    return vocab.encode(format_seconds(seconds));
}

std::string render_window(const Window& w) {
    return "[" + format_seconds(w.start) + ", " + format_seconds(w.end) + "]";
}

namespace {

// Parses digits '.' digit, the exact format emitted by format_seconds.
bool parse_number(const std::string& s, std::size_t& pos, double& out) {
    std::size_t start = pos;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
    if (pos == start) return false;
    if (pos >= s.size() || s[pos] != '.') return false;
    ++pos;
    if (pos >= s.size() || s[pos] < '0' || s[pos] > '9') return false;
    ++pos;
    out = std::stod(s.substr(start, pos - start));
    return true;
}

ParsedWindow fail(std::string reason) {
    ParsedWindow p;
    p.reason = std::move(reason);
    return p;
}

} // namespace

ParsedWindow parse_window(const std::string& text, bool clamp_inverted) {
    std::size_t pos = 0;
    auto expect = [&](const char* lit) {
        std::size_t n = std::string(lit).size();
        if (text.compare(pos, n, lit) != 0) return false;
        pos += n;
        return true;
    };
    double a = 0.0, b = 0.0;
    if (!expect("[")) return fail("missing '['");
    if (!parse_number(text, pos, a)) return fail("bad start time");
    if (!expect("s")) return fail("missing 's' after start");
    if (!expect(", ")) return fail("missing ', ' separator");
    if (!parse_number(text, pos, b)) return fail("bad end time");
    if (!expect("s")) return fail("missing 's' after end");
    if (!expect("]")) return fail("missing ']'");
    if (pos != text.size()) return fail("trailing characters");
    if (a > b) {
        if (!clamp_inverted) return fail("start > end");
        std::swap(a, b);
    }
    ParsedWindow p;
    p.ok = true;
    p.window = {a, b};
    return p;
}

} // namespace vtg

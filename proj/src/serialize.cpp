#include "vtg/serialize.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "vtg/errors.hpp"

namespace vtg {

namespace {

// All multi-byte fields are little-endian on disk; swap on big-endian hosts.
template <typename T>
T to_le(T x) {
    if constexpr (std::endian::native == std::endian::big) {
        T out;
        auto* a = reinterpret_cast<unsigned char*>(&x);
        auto* b = reinterpret_cast<unsigned char*>(&out);
        for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = a[sizeof(T) - 1 - i];
        return out;
    }
    return x;
}

template <typename T>
void put(std::ofstream& out, T x) {
    T le = to_le(x);
    out.write(reinterpret_cast<const char*>(&le), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& what) {
    T x;
    in.read(reinterpret_cast<char*>(&x), sizeof(T));
    if (!in) throw LoadError("truncated file while reading " + what);
    return to_le(x);
}

void put_string(std::ofstream& out, const std::string& s) {
    put<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::ifstream& in, const std::string& what, std::uint64_t max_len) {
    std::uint64_t len = get<std::uint64_t>(in, what + " length");
    if (len > max_len) throw LoadError(what + " length " + std::to_string(len) + " is implausible");
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) throw LoadError("truncated file while reading " + what);
    return s;
}

void put_doubles(std::ofstream& out, const std::vector<double>& v) {
    if constexpr (std::endian::native == std::endian::big) {
        for (double x : v) put<double>(out, x);
    } else {
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
}

std::vector<double> get_doubles(std::ifstream& in, std::size_t n, const std::string& what) {
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw LoadError("truncated file while reading " + what);
    if constexpr (std::endian::native == std::endian::big)
        for (double& x : v) x = to_le(x);
    return v;
}

void expect_magic(std::ifstream& in, const char* magic, const std::string& kind) {
    char buf[4];
    in.read(buf, 4);
    if (!in || std::memcmp(buf, magic, 4) != 0)
        throw LoadError("not a " + kind + " file (bad magic)");
}

} // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot open checkpoint for writing: " + path);
    out.write("VTGC", 4);
    put<std::uint32_t>(out, Checkpoint::kVersion);
    put_string(out, ckpt.config_json);
    put<std::uint64_t>(out, ckpt.params.size());

    for (const auto& [name, t] : ckpt.params) {
        if (!t.defined()) throw ValueError("checkpoint parameter '" + name + "' is undefined");
        put_string(out, name);
        put<std::uint64_t>(out, t.rank());
        for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
        put_doubles(out, t.data());
    }

    put<std::uint8_t>(out, ckpt.optimizer ? 1 : 0);
    if (ckpt.optimizer) {
        const OptimizerState& st = *ckpt.optimizer;
        if (st.m.size() != ckpt.params.size() || st.v.size() != ckpt.params.size())
            throw ValueError("optimizer state count does not match parameter count");
        put<std::uint64_t>(out, st.step);
        for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
            std::size_t n = ckpt.params[i].second.numel();
            if (st.m[i].size() != n || st.v[i].size() != n)
                throw ValueError("optimizer state shape mismatch for parameter '" +
                                 ckpt.params[i].first + "'");
            put_doubles(out, st.m[i]);
            put_doubles(out, st.v[i]);
        }
    }
    out.flush();
    if (!out) throw LoadError("write failed for checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open checkpoint: " + path);
    expect_magic(in, "VTGC", "checkpoint");
    std::uint32_t version = get<std::uint32_t>(in, "version");
    if (version != Checkpoint::kVersion)
        throw LoadError("unsupported checkpoint version " + std::to_string(version));

    Checkpoint ckpt;
    ckpt.config_json = get_string(in, "config JSON", 1u << 20);
    std::uint64_t n_params = get<std::uint64_t>(in, "parameter count");
    if (n_params > (1u << 20)) throw LoadError("implausible parameter count");

    for (std::uint64_t p = 0; p < n_params; ++p) {
        std::string name = get_string(in, "parameter name", 1u << 16);
        std::uint64_t rank = get<std::uint64_t>(in, "rank of '" + name + "'");
        if (rank > 8) throw LoadError("implausible rank for parameter '" + name + "'");
        std::vector<std::size_t> shape(rank);
        std::size_t numel = 1;
        for (auto& d : shape) {
            d = static_cast<std::size_t>(get<std::uint64_t>(in, "shape of '" + name + "'"));
            if (d == 0 || numel > (1u << 28) / d)
                throw LoadError("implausible shape for parameter '" + name + "'");
            numel *= d;
        }
        std::vector<double> data = get_doubles(in, numel, "data of '" + name + "'");
        ckpt.params.emplace_back(name, Tensor::from_data(shape, std::move(data)));
    }

    std::uint8_t has_opt = get<std::uint8_t>(in, "optimizer flag");
    if (has_opt > 1) throw LoadError("corrupt optimizer flag");
    if (has_opt) {
        OptimizerState st;
        st.step = get<std::uint64_t>(in, "optimizer step");
        for (const auto& [name, t] : ckpt.params) {
            st.m.push_back(get_doubles(in, t.numel(), "optimizer m of '" + name + "'"));
            st.v.push_back(get_doubles(in, t.numel(), "optimizer v of '" + name + "'"));
        }
        ckpt.optimizer = std::move(st);
    }
    if (in.peek() != std::ifstream::traits_type::eof())
        throw LoadError("trailing bytes after checkpoint payload");
    return ckpt;
}

void write_svtf(const std::string& path, const Tensor& frames) {
    if (!frames.defined() || frames.rank() != 3)
        throw ValueError("SVTF payload must be a [T, N, D] tensor");
    const auto& shape = frames.shape();
    for (std::size_t d : shape)
        if (d > std::numeric_limits<std::uint32_t>::max())
            throw ValueError("SVTF dimension exceeds u32 range");

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot open SVTF for writing: " + path);
    out.write("SVTF", 4);
    put<std::uint32_t>(out, 1);
    for (std::size_t d : shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double x : frames.data()) {
        if (!std::isfinite(x)) throw ValueError("non-finite value in SVTF payload");
        float f = static_cast<float>(x);
        if (!std::isfinite(f)) throw ValueError("SVTF value overflows f32 range");
        put<float>(out, f);
    }
    out.flush();
    if (!out) throw LoadError("write failed for SVTF: " + path);
}

Tensor read_svtf(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open SVTF: " + path);
    expect_magic(in, "SVTF", "SVTF");
    std::uint32_t version = get<std::uint32_t>(in, "version");
    if (version != 1) throw LoadError("unsupported SVTF version " + std::to_string(version));
    std::uint32_t t = get<std::uint32_t>(in, "T");
    std::uint32_t n = get<std::uint32_t>(in, "N");
    std::uint32_t d = get<std::uint32_t>(in, "D");
    if (t == 0 || n == 0 || d == 0) throw LoadError("SVTF dimensions must be positive");
    std::uint64_t numel = std::uint64_t{t} * n * d;
    if (numel > (1u << 28)) throw LoadError("implausible SVTF payload size");

    std::vector<double> data(numel);
    for (auto& x : data) {
        float f = get<float>(in, "SVTF payload");
        if (!std::isfinite(f)) throw LoadError("non-finite value in SVTF payload");
        x = static_cast<double>(f);
    }
    if (in.peek() != std::ifstream::traits_type::eof())
        throw LoadError("SVTF payload length does not match header dimensions");
    return Tensor::from_data({t, n, d}, std::move(data));
}

} // namespace vtg

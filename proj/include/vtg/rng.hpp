#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace vtg {

// Deterministic RNG with hierarchical stream derivation.  A run owns one
// root Rng; independent consumers (data generation, weight init, noise
// injection, ...) each get a child via split(), so adding draws to one
// stream never perturbs another.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    // Derive an independent child stream, keyed by label and/or index.
    Rng split(std::string_view label) const;
    Rng split(std::uint64_t index) const;

    std::uint64_t next_u64();
    double uniform(double lo, double hi);          // [lo, hi)
    double normal(double mean = 0.0, double stddev = 1.0);
    std::size_t index(std::size_t n);              // uniform in [0, n)
    std::vector<std::size_t> permutation(std::size_t n);

private:
    std::uint64_t derive_key_;   // untouched by draws; used only for split()
    std::mt19937_64 gen_;
};

} // namespace vtg

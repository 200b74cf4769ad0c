#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vtg/tensor.hpp"

namespace vtg {

// Optimizer state captured alongside parameters; vectors are ordered exactly
// like `params` and shape-matched entry by entry.
struct OptimizerState {
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

// On-disk model artifact. Binary layout (all integers and floats little-endian):
//   "VTGC" | u32 version | u64 json_len | config JSON | u64 n_params |
//   per param: u64 name_len | name | u64 rank | u64 dims[rank] | f64 data[numel] |
//   u8 has_optimizer | (u64 step | per param: f64 m[numel] | f64 v[numel])
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::string config_json;
    std::vector<std::pair<std::string, Tensor>> params;
    std::optional<OptimizerState> optimizer;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);   // LoadError on any defect

// SVTF visual-feature file: "SVTF" | u32 version | u32 T | u32 N | u32 D |
// f32 payload, row-major [T, N, D]. Values must be finite; payloads round-trip
// bit-exactly at f32 precision.
void write_svtf(const std::string& path, const Tensor& frames);
Tensor read_svtf(const std::string& path);

} // namespace vtg

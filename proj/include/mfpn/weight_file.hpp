// SPDX-License-Identifier: Apache-2.0
//
// Binary tensor container, little-endian throughout:
//
//   "MFPW" | u32 version | u32 entry count |
//   per entry: u32 name length, UTF-8 name, u32 rank, rank x u64 dims,
//              prod(dims) x f64 values

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mfpn/weights.hpp"

namespace mfpn {

inline constexpr std::uint32_t kWeightFormatVersion = 1;

struct NamedArray {
    std::string name;
    std::vector<std::int64_t> dims;
    std::vector<double> values;

    bool operator==(const NamedArray&) const = default;
};

void write_arrays(std::ostream& out, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> read_arrays(std::istream& in);

void write_weights(std::ostream& out, const WeightStore& store);
void save_weights(const std::filesystem::path& path, const WeightStore& store);

/// Builds a fresh store; every entry becomes a trainable parameter.
WeightStore read_weights(std::istream& in);
WeightStore load_weights(const std::filesystem::path& path);

/// Overwrites values of an existing store. Names and dims must match exactly.
void load_weights_into(const std::filesystem::path& path, WeightStore& store);

}  // namespace mfpn

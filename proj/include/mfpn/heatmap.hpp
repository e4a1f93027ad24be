// SPDX-License-Identifier: Apache-2.0
//
// Per-level activation heatmaps: mean |activation| over channels, min-max
// normalised to 8-bit gray. A constant map has no range and is written as
// uniform mid-gray (128).

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "mfpn/pyramid.hpp"
#include "mfpn/tensor.hpp"

namespace mfpn {

struct Heatmap {
    int level = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values;  // row-major
};

inline constexpr std::uint8_t kConstantGray = 128;

/// Uses batch item 0.
Heatmap reduce_heatmap(const Tensor& map, int level);
std::vector<std::uint8_t> to_gray(const std::vector<double>& values);

void write_pgm(std::ostream& out, const Heatmap& map);
/// Header `level,y,x,value`; values in shortest round-trip form.
void write_heatmap_csv(std::ostream& out, const Heatmap& map);
/// Inverse of write_heatmap_csv for a single level.
Heatmap read_heatmap_csv(std::istream& in);

/// Writes `<prefix>_L{i}.pgm` and `<prefix>_L{i}.csv` for every level and
/// returns the paths written. Throws std::runtime_error on I/O failure.
std::vector<std::filesystem::path> export_heatmap(const PyramidSet& pyramid,
                                                  const std::filesystem::path& prefix);

}  // namespace mfpn

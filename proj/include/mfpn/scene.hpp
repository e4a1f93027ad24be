// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multi-scale "blob" scenes with per-level heat-map targets.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "mfpn/pyramid.hpp"
#include "mfpn/tensor.hpp"

namespace mfpn {

enum class SizeClass { small, medium, large };

inline constexpr SizeClass kAllSizeClasses[] = {SizeClass::small, SizeClass::medium, SizeClass::large};

std::string_view to_string(SizeClass c);

/// small [4,8), medium [8,16), large [16,32].
SizeClass classify_radius(double radius);
/// small -> 2, medium -> 3 (r < 12) or 4, large -> 5.
int assigned_level(double radius);
SizeClass level_class(int level);

struct Blob {
    double cx = 0.0;
    double cy = 0.0;
    double radius = 0.0;
    SizeClass size_class = SizeClass::small;
    int level = 2;
};

struct SceneSpec {
    int small = 1;
    int medium = 1;
    int large = 1;
    int image_size = 128;
    int channels = 1;
    double noise = 0.0;  // std-dev of additive Gaussian pixel noise

    void validate() const;
    bool operator==(const SceneSpec&) const = default;
};

inline constexpr int kSceneMinLevel = 2;
inline constexpr int kSceneMaxLevel = 5;
inline constexpr int kMaxPlacementAttempts = 1000;

struct BlobScene {
    std::uint64_t seed = 0;
    Tensor image;  // (1, channels, size, size)
    std::vector<Blob> blobs;
    LevelMap targets;  // (1, 1, size / 2^i, size / 2^i) for i = 2..5
};

/// Pure function of (seed, spec). Blobs are placed largest class first;
/// a blob that cannot be placed within kMaxPlacementAttempts throws
/// std::runtime_error.
BlobScene generate_blob_scene(std::uint64_t seed, const SceneSpec& spec);

/// Target cell of a blob at its level: floor(center / stride).
std::pair<int, int> target_cell(const Blob& blob);

/// One JSON line: seed, image size, channels, blob list.
void write_scene_record(std::ostream& record, const BlobScene& scene);
/// `<prefix>.json` holds the record; `<prefix>.mfpw` holds the image as a
/// single weight-file entry named "image".
void dump_scene(const std::filesystem::path& prefix, const BlobScene& scene);

}  // namespace mfpn

// SPDX-License-Identifier: Apache-2.0

#include "mfpn/scene.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <random>
#include <stdexcept>

#include "json.hpp"

#include "mfpn/weight_file.hpp"

namespace mfpn {

namespace {

struct RadiusRange {
    double lo;
    double hi;
};

RadiusRange radius_range(SizeClass c) {
    switch (c) {
        case SizeClass::small: return {4.0, 8.0};
        case SizeClass::medium: return {8.0, 16.0};
        case SizeClass::large: return {16.0, 32.0};
    }
    return {4.0, 8.0};
}

}  // namespace

std::string_view to_string(SizeClass c) {
    switch (c) {
        case SizeClass::small: return "small";
        case SizeClass::medium: return "medium";
        case SizeClass::large: return "large";
    }
    return "unknown";
}

SizeClass classify_radius(double radius) {
    if (radius < 4.0 || radius > 32.0) {
        throw std::invalid_argument("blob radius " + std::to_string(radius) + " outside [4, 32]");
    }
    if (radius < 8.0) {
        return SizeClass::small;
    }
    return radius < 16.0 ? SizeClass::medium : SizeClass::large;
}

int assigned_level(double radius) {
    switch (classify_radius(radius)) {
        case SizeClass::small: return 2;
        case SizeClass::medium: return radius < 12.0 ? 3 : 4;
        case SizeClass::large: return 5;
    }
    return 2;
}

SizeClass level_class(int level) {
    switch (level) {
        case 2: return SizeClass::small;
        case 3:
        case 4: return SizeClass::medium;
        case 5: return SizeClass::large;
        default: throw std::invalid_argument("no size class for level " + std::to_string(level));
    }
}

void SceneSpec::validate() const {
    if (small < 0 || medium < 0 || large < 0 || small + medium + large < 1) {
        throw std::invalid_argument("scene needs at least one blob and non-negative counts");
    }
    if (image_size != 128 && image_size != 256) {
        throw std::invalid_argument("scene image size must be 128 or 256");
    }
    if (channels != 1 && channels != 3) {
        throw std::invalid_argument("scene images have 1 or 3 channels");
    }
    if (!(noise >= 0.0) || !std::isfinite(noise)) {
        throw std::invalid_argument("scene noise must be finite and >= 0");
    }
}

std::pair<int, int> target_cell(const Blob& blob) {
    const double stride = std::ldexp(1.0, blob.level);
    return {static_cast<int>(std::floor(blob.cx / stride)), static_cast<int>(std::floor(blob.cy / stride))};
}

BlobScene generate_blob_scene(std::uint64_t seed, const SceneSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(seed);
    const double size = spec.image_size;

    BlobScene scene;
    scene.seed = seed;
    const std::pair<SizeClass, int> order[] = {
        {SizeClass::large, spec.large}, {SizeClass::medium, spec.medium}, {SizeClass::small, spec.small}};
    for (const auto& [cls, count] : order) {
        const RadiusRange range = radius_range(cls);
        for (int k = 0; k < count; ++k) {
            bool placed = false;
            for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
                const double r = std::uniform_real_distribution<double>(range.lo, range.hi)(rng);
                std::uniform_real_distribution<double> pos(r, size - r);
                const double cx = pos(rng);
                const double cy = pos(rng);
                placed = true;
                for (const Blob& b : scene.blobs) {
                    if (std::hypot(cx - b.cx, cy - b.cy) < 2.0 * (r + b.radius)) {
                        placed = false;
                        break;
                    }
                }
                if (placed) {
                    scene.blobs.push_back(Blob{cx, cy, r, cls, assigned_level(r)});
                }
            }
            if (!placed) {
                throw std::runtime_error("cannot place " + std::string(to_string(cls)) + " blob #" +
                                         std::to_string(k) + " on a " + std::to_string(spec.image_size) +
                                         " canvas after " + std::to_string(kMaxPlacementAttempts) +
                                         " attempts");
            }
        }
    }

    const int S = spec.image_size;
    scene.image = Tensor(Shape{1, spec.channels, S, S});
    auto img = scene.image.mutable_values();
    for (const Blob& b : scene.blobs) {
        std::vector<double> gains(static_cast<std::size_t>(spec.channels), 1.0);
        for (std::size_t ch = 1; ch < gains.size(); ++ch) {
            gains[ch] = std::uniform_real_distribution<double>(0.5, 1.0)(rng);
        }
        const double sigma = b.radius / 2.0;
        const double inv = 1.0 / (2.0 * sigma * sigma);
        for (int y = 0; y < S; ++y) {
            for (int x = 0; x < S; ++x) {
                const double dx = x + 0.5 - b.cx;
                const double dy = y + 0.5 - b.cy;
                const double v = std::exp(-(dx * dx + dy * dy) * inv);
                for (int ch = 0; ch < spec.channels; ++ch) {
                    img[static_cast<std::size_t>((ch * S + y) * S + x)] += gains[static_cast<std::size_t>(ch)] * v;
                }
            }
        }
    }
    if (spec.noise > 0.0) {
        std::normal_distribution<double> noise(0.0, spec.noise);
        for (double& v : img) {
            v += noise(rng);
        }
    }

    for (int level = kSceneMinLevel; level <= kSceneMaxLevel; ++level) {
        const int cells = S >> level;
        scene.targets[level] = Tensor(Shape{1, 1, cells, cells});
    }
    for (const Blob& b : scene.blobs) {
        Tensor& t = scene.targets.at(b.level);
        const int cells = static_cast<int>(t.shape().w);
        const double sigma = b.radius / 2.0 / std::ldexp(1.0, b.level);
        const double inv = 1.0 / (2.0 * sigma * sigma);
        const auto [gx, gy] = target_cell(b);
        for (int y = 0; y < cells; ++y) {
            for (int x = 0; x < cells; ++x) {
                const double d2 = static_cast<double>((x - gx) * (x - gx) + (y - gy) * (y - gy));
                double& cell = t.at(0, 0, y, x);
                cell = std::max(cell, std::exp(-d2 * inv));
            }
        }
    }
    return scene;
}

void write_scene_record(std::ostream& record, const BlobScene& scene) {
    nlohmann::json j;
    j["seed"] = scene.seed;
    j["image_size"] = scene.image.shape().w;
    j["channels"] = scene.image.shape().c;
    j["blobs"] = nlohmann::json::array();
    for (const Blob& b : scene.blobs) {
        j["blobs"].push_back({{"cx", b.cx},
                              {"cy", b.cy},
                              {"radius", b.radius},
                              {"class", std::string(to_string(b.size_class))},
                              {"level", b.level}});
    }
    record << j.dump() << '\n';
}

void dump_scene(const std::filesystem::path& prefix, const BlobScene& scene) {
    std::ofstream rec(prefix.string() + ".json");
    if (!rec) {
        throw std::runtime_error("cannot write " + prefix.string() + ".json");
    }
    write_scene_record(rec, scene);
    std::ofstream img(prefix.string() + ".mfpw", std::ios::binary);
    if (!img) {
        throw std::runtime_error("cannot write " + prefix.string() + ".mfpw");
    }
    const Shape s = scene.image.shape();
    const auto v = scene.image.values();
    write_arrays(img, {NamedArray{"image", {s.n, s.c, s.h, s.w}, std::vector<double>(v.begin(), v.end())}});
}

}  // namespace mfpn

// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration as flat `key: value` text. Lines starting with
// `#` are comments; blank lines are ignored. Lists are comma-separated.
// Unknown and repeated keys are errors; missing keys keep their defaults.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "mfpn/backbone.hpp"
#include "mfpn/pyramid.hpp"
#include "mfpn/scene.hpp"
#include "mfpn/training.hpp"

namespace mfpn {

struct ExperimentConfig {
    BuilderKind builder = BuilderKind::mfpn;
    FpnConfig fpn;
    BackboneConfig backbone;
    /// scene.channels always mirrors backbone.image_channels.
    SceneSpec scene = default_training_scene();
    double lr = 0.05;
    int epochs = 1;
    int scenes_per_epoch = 500;
    std::uint64_t seed = 0;
    int eval_scenes = 200;
    std::uint64_t eval_seed = 1000;
    std::string out_dir = "out";

    /// Throws ConfigError naming the offending field.
    void validate() const;
    /// Toy-model view; requires pyramid levels 2..5 without extra levels.
    ModelConfig model_config() const;
    bool operator==(const ExperimentConfig&) const = default;
};

class ConfigError : public std::runtime_error {
public:
    ConfigError(int line, std::string field, const std::string& message);
    int line() const { return line_; }  // 0 when not tied to a line
    const std::string& field() const { return field_; }

private:
    int line_;
    std::string field_;
};

ExperimentConfig parse_config(std::string_view text);
/// Every key in a fixed order; doubles in shortest round-trip form.
std::string write_config(const ExperimentConfig& cfg);

/// Parses, validates and logs the effective config at info level.
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

}  // namespace mfpn

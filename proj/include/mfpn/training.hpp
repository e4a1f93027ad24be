// SPDX-License-Identifier: Apache-2.0
//
// Toy detector (backbone -> laterals -> neck -> shared 1x1 head), its loss,
// an SGD loop and per-size-class peak-detection scoring.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mfpn/backbone.hpp"
#include "mfpn/pyramid.hpp"
#include "mfpn/scene.hpp"
#include "mfpn/tensor.hpp"
#include "mfpn/weights.hpp"

namespace mfpn {

/// Training scenes default to 256 x 256 with one blob per size class.
SceneSpec default_training_scene();

struct ModelConfig {
    BuilderKind kind = BuilderKind::mfpn;
    int channels = 16;
    BackboneConfig backbone;
    SceneSpec scene = default_training_scene();

    /// Neck config over G2..G5 with the backbone widths as inputs.
    FpnConfig fpn_config() const;
    void validate() const;
};

/// `head.weight` (1, C, 1, 1) and `head.bias` (1).
void add_head_weights(WeightStore& store, int channels);
/// Backbone, neck of cfg.kind and head, all zero.
void add_model_weights(WeightStore& store, const ModelConfig& cfg);

/// sigmoid(head conv) on every level. Throws std::invalid_argument when a
/// level's channel count differs from the head's.
LevelMap head_forward(Graph& g, const PyramidSet& pyramid, const WeightStore& weights);

/// Image to per-level predictions.
LevelMap model_forward(Graph& g, const ModelConfig& cfg, const WeightStore& weights, const Tensor& image);

/// A positive cell is a blob's own target cell, where the target is exactly 1.
inline constexpr double kPositiveTarget = 1.0;

/// Weight of positive cells on one level: clamp(negatives / positives, 1, 100),
/// or 1 without positives.
double positive_weight(const Tensor& target);

/// sum(w * bce) / sum(w) over the cells of every level. Throws
/// std::invalid_argument on mismatched levels or shapes and on targets
/// outside [0, 1].
Tensor detection_loss(Graph& g, const LevelMap& pred, const LevelMap& target);

inline constexpr int kRunningWindow = 50;

struct TrainState {
    std::int64_t step = 0;
    double lr = 0.05;
    double running_loss = 0.0;  // mean of the last kRunningWindow losses
    std::uint64_t seed = 0;
    WeightStore weights;
    std::vector<double> losses;  // one per step since step 0
};

/// Glorot-initialised weights from `seed`.
TrainState make_train_state(const ModelConfig& cfg, double lr, std::uint64_t seed);

/// Scene seed used at a given step.
std::uint64_t scene_seed(std::uint64_t seed, std::int64_t step);

/// One SGD step on one scene; returns the loss before the update.
double train_step(TrainState& state, const ModelConfig& cfg, const BlobScene& scene);

/// `scenes` steps on scenes drawn from scene_seed(state.seed, step).
/// Throws std::invalid_argument for lr < 0 and std::runtime_error naming
/// the step when the loss is not finite (weights are left un-updated).
void train_epoch(TrainState& state, const ModelConfig& cfg, int scenes);

/// Mean of losses[begin, begin + count) clipped to the available range.
double window_mean(const std::vector<double>& losses, std::size_t begin, std::size_t count);

void write_loss_csv(std::ostream& out, const std::vector<double>& losses, std::int64_t first_step = 0);

/// `<dir>/weights.mfpw` and `<dir>/state.txt`.
void save_train_state(const std::filesystem::path& dir, const TrainState& state);
TrainState load_train_state(const std::filesystem::path& dir);

struct ClassScore {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;

    double precision() const;
    double recall() const;
    /// 0 when there are no true positives.
    double f1() const;
};

struct SizeScores {
    std::array<ClassScore, 3> by_class{};  // indexed like kAllSizeClasses

    ClassScore& operator[](SizeClass c) { return by_class[static_cast<std::size_t>(c)]; }
    const ClassScore& operator[](SizeClass c) const { return by_class[static_cast<std::size_t>(c)]; }
    /// Header `class,precision,recall,f1`.
    std::string to_csv() const;
};

inline constexpr double kPeakThreshold = 0.5;
inline constexpr double kMatchRadius = 1.5;  // cells

struct Peak {
    int y = 0;
    int x = 0;
    double value = 0.0;
};

/// Cells above kPeakThreshold that are >= every 8-neighbour. On a plateau
/// only the first cell in row-major order is kept.
std::vector<Peak> find_peaks(const Tensor& map);

/// Greedy nearest-first one-to-one matching of peaks to blobs per level.
/// Unmatched peaks count as false positives of their level's class.
void score_predictions(const LevelMap& pred, const std::vector<Blob>& blobs, SizeScores& scores);

SizeScores evaluate_by_size(const WeightStore& weights, const ModelConfig& cfg, int scenes, std::uint64_t seed);

}  // namespace mfpn

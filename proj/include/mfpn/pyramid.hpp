// SPDX-License-Identifier: Apache-2.0
//
// Feature-pyramid necks built as differentiable graphs over backbone
// features. Level i always lives at stride 2^i.
//
// Weight prefixes (each a conv with .weight and .bias):
//   lateral.{i}  1x1, backbone width -> C, shared by every branch
//   fpn.{i}      3x3 smoothing conv of the baseline FPN
//   td.{i}       3x3, produces top-down level i
//   bu.{i}       3x3, produces bottom-up level i
//   fs.s, fs.l   3x3, 2C -> C, the two fusing-splitting convs
//   extra.{i}    3x3 stride-2 convs above the backbone (counted only)

#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mfpn/tensor.hpp"
#include "mfpn/weights.hpp"

namespace mfpn {

enum class BuilderKind { fpn, top_down, bottom_up, fusing_splitting, mfpn };

inline constexpr BuilderKind kAllBuilders[] = {BuilderKind::fpn, BuilderKind::top_down,
                                               BuilderKind::bottom_up, BuilderKind::fusing_splitting,
                                               BuilderKind::mfpn};

std::string_view to_string(BuilderKind kind);
/// Accepts the canonical names plus hyphenated spellings ("top-down").
BuilderKind parse_builder_kind(std::string_view name);

enum class ExtraLevels { off, strided_conv };

std::string_view to_string(ExtraLevels extra);
ExtraLevels parse_extra_levels(std::string_view name);

struct FpnConfig {
    int min_level = 2;
    int max_level = 5;
    int channels = 256;
    /// Input widths of the backbone maps, starting at min_level.
    std::vector<int> backbone_channels{256, 512, 1024, 2048};
    ExtraLevels extra_levels = ExtraLevels::off;

    int level_count() const { return max_level - min_level + 1; }
    int backbone_top() const { return min_level + static_cast<int>(backbone_channels.size()) - 1; }
    std::vector<int> levels() const;
    std::vector<int> backbone_levels() const;
    int backbone_width(int level) const;
    /// Throws std::invalid_argument describing the first violated rule.
    void validate() const;
    bool operator==(const FpnConfig&) const = default;
};

using LevelMap = std::map<int, Tensor>;

struct BackboneFeatures {
    LevelMap raw;        // G_i
    LevelMap projected;  // C_i, all with `channels` channels
};

struct PyramidSet {
    BuilderKind kind = BuilderKind::mfpn;
    LevelMap maps;
};

struct FusionIntermediates {
    Tensor alpha_s;  // level-4 grid
    Tensor alpha_l;  // level-3 grid
    Tensor beta_s;
    Tensor beta_l;
};

struct ParamSpec {
    std::string name;
    std::vector<std::int64_t> dims;
    std::string component;  // "laterals", "fpn", "td", "bu", "fs" or "extra"
};

/// Parameter shapes a neck of `kind` owns, in declaration order. MFPN lists
/// the laterals once.
std::vector<ParamSpec> pyramid_param_specs(const FpnConfig& cfg, BuilderKind kind);

/// Allocates (zeroed) every parameter returned by pyramid_param_specs.
void add_pyramid_weights(WeightStore& store, const FpnConfig& cfg, BuilderKind kind);

BackboneFeatures apply_laterals(Graph& g, const BackboneFeatures& feats, const FpnConfig& cfg,
                                const WeightStore& weights);

PyramidSet build_fpn(Graph& g, const BackboneFeatures& feats, const FpnConfig& cfg,
                     const WeightStore& weights);
PyramidSet build_top_down(Graph& g, const BackboneFeatures& feats, const FpnConfig& cfg,
                          const WeightStore& weights);
PyramidSet build_bottom_up(Graph& g, const BackboneFeatures& feats, const FpnConfig& cfg,
                           const WeightStore& weights);
PyramidSet build_fusing_splitting(Graph& g, const BackboneFeatures& feats, const FpnConfig& cfg,
                                  const WeightStore& weights,
                                  FusionIntermediates* intermediates = nullptr);
PyramidSet build_mfpn(Graph& g, const BackboneFeatures& feats, const FpnConfig& cfg,
                      const WeightStore& weights);

PyramidSet build_pyramid(Graph& g, BuilderKind kind, const BackboneFeatures& feats,
                         const FpnConfig& cfg, const WeightStore& weights);

/// Expected output-level x backbone-level dependency pattern of each
/// builder; mask[r][c] pairs cfg.levels()[r] with cfg.levels()[c].
std::vector<std::vector<bool>> analytic_flow_mask(BuilderKind kind, const FpnConfig& cfg);

}  // namespace mfpn

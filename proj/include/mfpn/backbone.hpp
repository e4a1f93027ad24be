// SPDX-License-Identifier: Apache-2.0
//
// Small convolutional backbone producing G2..G5 at strides 4..32.
//
// Each stage is conv3x3 -> relu -> maxpool2x2, so every stage halves the
// grid. A stem stage (backbone.stem) takes the image to stride 2 and the
// four level stages (backbone.{2..5}) follow.

#pragma once

#include <cstdint>
#include <vector>

#include "mfpn/pyramid.hpp"
#include "mfpn/tensor.hpp"
#include "mfpn/weights.hpp"

namespace mfpn {

struct BackboneConfig {
    int image_channels = 1;
    /// Output widths of G2..G5.
    std::vector<int> widths{8, 16, 16, 16};

    void validate() const;
    bool operator==(const BackboneConfig&) const = default;
};

inline constexpr int kBackboneMinLevel = 2;
inline constexpr int kBackboneMaxLevel = 5;

void add_backbone_weights(WeightStore& store, const BackboneConfig& cfg);

/// Fills `raw` only; run apply_laterals for the projections.
BackboneFeatures synth_backbone_forward(Graph& g, const Tensor& image, const BackboneConfig& cfg,
                                        const WeightStore& weights);

}  // namespace mfpn

// SPDX-License-Identifier: Apache-2.0

#include "mfpn/backbone.hpp"

#include <stdexcept>
#include <string>

#include "mfpn/ops.hpp"

namespace mfpn {

namespace {

Tensor stage(Graph& g, const Tensor& x, const WeightStore& weights, const std::string& prefix) {
    const ConvWeights cw = conv_weights(weights, prefix);
    return maxpool_2x2(g, relu(g, conv2d(g, x, cw.weight, cw.bias)));
}

}  // namespace

void BackboneConfig::validate() const {
    if (image_channels < 1) {
        throw std::invalid_argument("image_channels must be >= 1");
    }
    if (widths.size() != kBackboneMaxLevel - kBackboneMinLevel + 1) {
        throw std::invalid_argument("backbone needs 4 widths (G2..G5), got " +
                                    std::to_string(widths.size()));
    }
    for (int w : widths) {
        if (w < 1) {
            throw std::invalid_argument("backbone widths must be >= 1");
        }
    }
}

void add_backbone_weights(WeightStore& store, const BackboneConfig& cfg) {
    cfg.validate();
    add_conv(store, "backbone.stem", cfg.widths[0], cfg.image_channels, 3);
    int c_in = cfg.widths[0];
    for (int level = kBackboneMinLevel; level <= kBackboneMaxLevel; ++level) {
        const int c_out = cfg.widths[static_cast<std::size_t>(level - kBackboneMinLevel)];
        add_conv(store, "backbone." + std::to_string(level), c_out, c_in, 3);
        c_in = c_out;
    }
}

BackboneFeatures synth_backbone_forward(Graph& g, const Tensor& image, const BackboneConfig& cfg,
                                        const WeightStore& weights) {
    cfg.validate();
    const Shape s = image.shape();
    if (s.h % 32 != 0 || s.w % 32 != 0) {
        throw std::invalid_argument("backbone input must be divisible by 32, got " + s.str());
    }
    if (s.c != cfg.image_channels) {
        throw std::invalid_argument("image has " + std::to_string(s.c) + " channels, backbone expects " +
                                    std::to_string(cfg.image_channels));
    }
    BackboneFeatures feats;
    Tensor x = stage(g, image, weights, "backbone.stem");
    for (int level = kBackboneMinLevel; level <= kBackboneMaxLevel; ++level) {
        x = stage(g, x, weights, "backbone." + std::to_string(level));
        feats.raw[level] = x;
    }
    return feats;
}

}  // namespace mfpn

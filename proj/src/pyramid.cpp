// SPDX-License-Identifier: Apache-2.0

#include "mfpn/pyramid.hpp"

#include <algorithm>
#include <stdexcept>

#include "mfpn/ops.hpp"

namespace mfpn {

namespace {

std::string level_name(const char* prefix, int level) { return std::string(prefix) + "." + std::to_string(level); }

Tensor conv(Graph& g, const Tensor& x, const WeightStore& weights, const std::string& prefix) {
    const ConvWeights cw = conv_weights(weights, prefix);
    return conv2d(g, x, cw.weight, cw.bias);
}

void require_buildable(const FpnConfig& cfg) {
    cfg.validate();
    if (cfg.extra_levels != ExtraLevels::off) {
        throw std::invalid_argument("extra pyramid levels are only supported for parameter counting");
    }
}

const Tensor& level_at(const LevelMap& maps, int level, const char* what) {
    auto it = maps.find(level);
    if (it == maps.end() || !it->second.defined()) {
        throw std::invalid_argument(std::string(what) + ": missing level " + std::to_string(level));
    }
    return it->second;
}

void check_projected(const BackboneFeatures& feats, const FpnConfig& cfg) {
    const auto levels = cfg.levels();
    if (feats.projected.size() != levels.size()) {
        throw std::invalid_argument("projected features cover " + std::to_string(feats.projected.size()) +
                                    " levels, config has " + std::to_string(levels.size()));
    }
    const Shape base = level_at(feats.projected, cfg.min_level, "projected features").shape();
    for (int level : levels) {
        const Shape s = level_at(feats.projected, level, "projected features").shape();
        const int step = level - cfg.min_level;
        if (s.c != cfg.channels) {
            throw std::invalid_argument("projected level " + std::to_string(level) + " has " +
                                        std::to_string(s.c) + " channels, expected " +
                                        std::to_string(cfg.channels));
        }
        if (s.n != base.n || (s.h << step) != base.h || (s.w << step) != base.w) {
            throw std::invalid_argument("projected level " + std::to_string(level) + " shape " + s.str() +
                                        " is not a 2x halving of level " + std::to_string(cfg.min_level));
        }
    }
}

}  // namespace

std::string_view to_string(BuilderKind kind) {
    switch (kind) {
        case BuilderKind::fpn: return "fpn";
        case BuilderKind::top_down: return "top_down";
        case BuilderKind::bottom_up: return "bottom_up";
        case BuilderKind::fusing_splitting: return "fusing_splitting";
        case BuilderKind::mfpn: return "mfpn";
    }
    return "unknown";
}

BuilderKind parse_builder_kind(std::string_view name) {
    std::string s(name);
    for (char& ch : s) {
        if (ch == '-') {
            ch = '_';
        }
    }
    for (BuilderKind k : kAllBuilders) {
        if (to_string(k) == s) {
            return k;
        }
    }
    throw std::invalid_argument("unknown builder kind '" + std::string(name) + "'");
}

std::string_view to_string(ExtraLevels extra) {
    return extra == ExtraLevels::off ? "off" : "strided_conv";
}

ExtraLevels parse_extra_levels(std::string_view name) {
    if (name == "off") {
        return ExtraLevels::off;
    }
    if (name == "strided_conv" || name == "strided-conv") {
        return ExtraLevels::strided_conv;
    }
    throw std::invalid_argument("unknown extra-levels policy '" + std::string(name) + "'");
}

std::vector<int> FpnConfig::levels() const {
    std::vector<int> out;
    for (int i = min_level; i <= max_level; ++i) {
        out.push_back(i);
    }
    return out;
}

std::vector<int> FpnConfig::backbone_levels() const {
    std::vector<int> out;
    for (int i = min_level; i <= backbone_top(); ++i) {
        out.push_back(i);
    }
    return out;
}

int FpnConfig::backbone_width(int level) const {
    const int k = level - min_level;
    if (k < 0 || k >= static_cast<int>(backbone_channels.size())) {
        throw std::invalid_argument("no backbone level " + std::to_string(level));
    }
    return backbone_channels[static_cast<std::size_t>(k)];
}

void FpnConfig::validate() const {
    if (min_level < 1) {
        throw std::invalid_argument("min_level must be >= 1");
    }
    if (max_level < min_level + 1) {
        throw std::invalid_argument("a pyramid needs at least 2 levels");
    }
    if (channels < 1) {
        throw std::invalid_argument("channels must be >= 1");
    }
    if (backbone_channels.size() < 2) {
        throw std::invalid_argument("at least 2 backbone levels are required");
    }
    for (int c : backbone_channels) {
        if (c < 1) {
            throw std::invalid_argument("backbone channel counts must be >= 1");
        }
    }
    if (extra_levels == ExtraLevels::off && backbone_top() != max_level) {
        throw std::invalid_argument("backbone_channels must list one width per pyramid level (" +
                                    std::to_string(level_count()) + ") when extra levels are off");
    }
    if (extra_levels == ExtraLevels::strided_conv && backbone_top() > max_level) {
        throw std::invalid_argument("more backbone levels than pyramid levels");
    }
}

std::vector<ParamSpec> pyramid_param_specs(const FpnConfig& cfg, BuilderKind kind) {
    cfg.validate();
    const std::int64_t C = cfg.channels;
    const auto blevels = cfg.backbone_levels();
    std::vector<ParamSpec> specs;
    auto conv_spec = [&specs](std::string prefix, std::int64_t c_out, std::int64_t c_in, std::int64_t k,
                              const char* component) {
        specs.push_back({prefix + ".weight", {c_out, c_in, k, k}, component});
        specs.push_back({prefix + ".bias", {c_out}, component});
    };

    for (int level : blevels) {
        conv_spec(level_name("lateral", level), C, cfg.backbone_width(level), 1, "laterals");
    }
    auto per_level = [&](const char* prefix) {
        for (int level : blevels) {
            conv_spec(level_name(prefix, level), C, C, 3, prefix);
        }
    };
    auto fusing = [&] {
        if (blevels.size() != 4) {
            throw std::invalid_argument("fusing-splitting needs exactly 4 backbone levels, got " +
                                        std::to_string(blevels.size()));
        }
        conv_spec("fs.s", C, 2 * C, 3, "fs");
        conv_spec("fs.l", C, 2 * C, 3, "fs");
    };

    switch (kind) {
        case BuilderKind::fpn: per_level("fpn"); break;
        case BuilderKind::top_down: per_level("td"); break;
        case BuilderKind::bottom_up: per_level("bu"); break;
        case BuilderKind::fusing_splitting: fusing(); break;
        case BuilderKind::mfpn:
            per_level("td");
            per_level("bu");
            fusing();
            break;
    }

    if (cfg.extra_levels == ExtraLevels::strided_conv) {
        std::int64_t c_in = cfg.backbone_width(cfg.backbone_top());
        for (int level = cfg.backbone_top() + 1; level <= cfg.max_level; ++level) {
            conv_spec(level_name("extra", level), C, c_in, 3, "extra");
            c_in = C;
        }
    }
    return specs;
}

void add_pyramid_weights(WeightStore& store, const FpnConfig& cfg, BuilderKind kind) {
    for (ParamSpec& spec : pyramid_param_specs(cfg, kind)) {
        store.add(std::move(spec.name), std::move(spec.dims));
    }
}

BackboneFeatures apply_laterals(Graph& g, const BackboneFeatures& feats, const FpnConfig& cfg,
                                const WeightStore& weights) {
    require_buildable(cfg);
    BackboneFeatures out;
    out.raw = feats.raw;
    for (int level : cfg.levels()) {
        const Tensor& raw = level_at(feats.raw, level, "backbone features");
        const ConvWeights cw = conv_weights(weights, level_name("lateral", level));
        if (cw.weight.shape().n != cfg.channels) {
            throw std::invalid_argument("lateral." + std::to_string(level) + " produces " +
                                        std::to_string(cw.weight.shape().n) + " channels, expected " +
                                        std::to_string(cfg.channels));
        }
        out.projected[level] = conv2d(g, raw, cw.weight, cw.bias);
    }
    return out;
}

PyramidSet build_fpn(Graph& g, const BackboneFeatures& feats, const FpnConfig& cfg,
                     const WeightStore& weights) {
    require_buildable(cfg);
    check_projected(feats, cfg);
    PyramidSet out{BuilderKind::fpn, {}};
    Tensor merged = feats.projected.at(cfg.max_level);
    out.maps[cfg.max_level] = conv(g, merged, weights, level_name("fpn", cfg.max_level));
    for (int level = cfg.max_level - 1; level >= cfg.min_level; --level) {
        merged = add(g, upsample_nearest_x2(g, merged), feats.projected.at(level));
        out.maps[level] = conv(g, merged, weights, level_name("fpn", level));
    }
    return out;
}

PyramidSet build_top_down(Graph& g, const BackboneFeatures& feats, const FpnConfig& cfg,
                          const WeightStore& weights) {
    require_buildable(cfg);
    check_projected(feats, cfg);
    PyramidSet out{BuilderKind::top_down, {}};
    const Tensor& top = feats.projected.at(cfg.max_level);
    // Global context stands in for the missing higher level at the top.
    out.maps[cfg.max_level] =
        conv(g, add(g, top, global_avg_pool(g, top)), weights, level_name("td", cfg.max_level));
    for (int level = cfg.max_level - 1; level >= cfg.min_level; --level) {
        const Tensor merged = add(g, upsample_nearest_x2(g, out.maps.at(level + 1)), feats.projected.at(level));
        out.maps[level] = conv(g, merged, weights, level_name("td", level));
    }
    return out;
}

PyramidSet build_bottom_up(Graph& g, const BackboneFeatures& feats, const FpnConfig& cfg,
                           const WeightStore& weights) {
    require_buildable(cfg);
    check_projected(feats, cfg);
    PyramidSet out{BuilderKind::bottom_up, {}};
    for (int level = cfg.min_level; level <= cfg.max_level; ++level) {
        std::vector<Tensor> terms;
        if (level > cfg.min_level) {
            terms.push_back(maxpool_2x2(g, out.maps.at(level - 1)));
        }
        terms.push_back(feats.projected.at(level));
        if (level < cfg.max_level) {
            terms.push_back(upsample_nearest_x2(g, feats.projected.at(level + 1)));
        }
        out.maps[level] = conv(g, add(g, terms), weights, level_name("bu", level));
    }
    return out;
}

PyramidSet build_fusing_splitting(Graph& g, const BackboneFeatures& feats, const FpnConfig& cfg,
                                  const WeightStore& weights, FusionIntermediates* intermediates) {
    require_buildable(cfg);
    if (cfg.level_count() != 4) {
        throw std::invalid_argument("fusing-splitting needs exactly 4 levels, got " +
                                    std::to_string(cfg.level_count()));
    }
    check_projected(feats, cfg);
    const int l2 = cfg.min_level;
    const int l3 = l2 + 1;
    const int l4 = l2 + 2;
    const int l5 = l2 + 3;
    const auto& c = feats.projected;

    FusionIntermediates f;
    f.alpha_s = add(g, c.at(l4), upsample_nearest_x2(g, c.at(l5)));
    f.alpha_l = add(g, maxpool_2x2(g, c.at(l2)), c.at(l3));
    f.beta_s = conv(g, concat_channels(g, f.alpha_s, maxpool_2x2(g, f.alpha_l)), weights, "fs.s");
    f.beta_l = conv(g, concat_channels(g, upsample_nearest_x2(g, f.alpha_s), f.alpha_l), weights, "fs.l");

    PyramidSet out{BuilderKind::fusing_splitting, {}};
    out.maps[l2] = upsample_nearest_x2(g, f.beta_l);
    out.maps[l3] = f.beta_l;
    out.maps[l4] = f.beta_s;
    out.maps[l5] = maxpool_2x2(g, f.beta_s);
    if (intermediates != nullptr) {
        *intermediates = f;
    }
    return out;
}

PyramidSet build_mfpn(Graph& g, const BackboneFeatures& feats, const FpnConfig& cfg,
                      const WeightStore& weights) {
    const PyramidSet td = build_top_down(g, feats, cfg, weights);
    const PyramidSet bu = build_bottom_up(g, feats, cfg, weights);
    const PyramidSet fs = build_fusing_splitting(g, feats, cfg, weights);
    PyramidSet out{BuilderKind::mfpn, {}};
    for (int level : cfg.levels()) {
        const Tensor terms[] = {td.maps.at(level), bu.maps.at(level), fs.maps.at(level)};
        out.maps[level] = add(g, terms);
    }
    return out;
}

PyramidSet build_pyramid(Graph& g, BuilderKind kind, const BackboneFeatures& feats,
                         const FpnConfig& cfg, const WeightStore& weights) {
    switch (kind) {
        case BuilderKind::fpn: return build_fpn(g, feats, cfg, weights);
        case BuilderKind::top_down: return build_top_down(g, feats, cfg, weights);
        case BuilderKind::bottom_up: return build_bottom_up(g, feats, cfg, weights);
        case BuilderKind::fusing_splitting: return build_fusing_splitting(g, feats, cfg, weights);
        case BuilderKind::mfpn: return build_mfpn(g, feats, cfg, weights);
    }
    throw std::invalid_argument("unknown builder kind");
}

std::vector<std::vector<bool>> analytic_flow_mask(BuilderKind kind, const FpnConfig& cfg) {
    const auto levels = cfg.levels();
    const int top = cfg.max_level;
    std::vector<std::vector<bool>> mask(levels.size(), std::vector<bool>(levels.size(), false));
    for (std::size_t r = 0; r < levels.size(); ++r) {
        for (std::size_t c = 0; c < levels.size(); ++c) {
            const int i = levels[r];
            const int j = levels[c];
            switch (kind) {
                case BuilderKind::fpn:
                case BuilderKind::top_down: mask[r][c] = j >= i; break;
                case BuilderKind::bottom_up: mask[r][c] = j <= std::min(i + 1, top); break;
                case BuilderKind::fusing_splitting:
                case BuilderKind::mfpn: mask[r][c] = true; break;
            }
        }
    }
    return mask;
}

}  // namespace mfpn

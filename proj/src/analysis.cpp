// SPDX-License-Identifier: Apache-2.0

#include "mfpn/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

#include "mfpn/ops.hpp"
#include "mfpn/weights.hpp"

namespace mfpn {

namespace {

std::string dims_str(const std::vector<std::int64_t>& dims) {
    std::string s;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        s += (i ? "x" : "") + std::to_string(dims[i]);
    }
    return s;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(shape);
    for (double& v : t.mutable_values()) {
        v = dist(rng);
    }
    return t;
}

std::string millions(std::int64_t n) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << static_cast<double>(n) / 1e6;
    return os.str();
}

}  // namespace

std::int64_t ParamReport::subtotal(const std::string& component) const {
    auto it = subtotals.find(component);
    return it == subtotals.end() ? 0 : it->second;
}

std::string ParamReport::to_text() const {
    std::ostringstream os;
    os << "parameters for " << to_string(kind) << "\n";
    os << std::left << std::setw(22) << "name" << std::setw(20) << "shape" << std::right << std::setw(12)
       << "count" << "  component\n";
    for (const ParamRow& r : rows) {
        os << std::left << std::setw(22) << r.name << std::setw(20) << dims_str(r.dims) << std::right
           << std::setw(12) << r.count << "  " << r.component << "\n";
    }
    for (const auto& [component, n] : subtotals) {
        os << "subtotal " << std::left << std::setw(13) << component << std::right << std::setw(32) << n << "\n";
    }
    os << "total " << std::setw(48) << total << "  (" << millions(total) << " M)\n";
    return os.str();
}

nlohmann::ordered_json ParamReport::to_json() const {
    nlohmann::ordered_json j;
    j["kind"] = std::string(to_string(kind));
    j["rows"] = nlohmann::ordered_json::array();
    for (const ParamRow& r : rows) {
        j["rows"].push_back({{"name", r.name}, {"shape", r.dims}, {"count", r.count}, {"component", r.component}});
    }
    j["subtotals"] = subtotals;
    j["total"] = total;
    return j;
}

ParamReport count_params(const FpnConfig& cfg, BuilderKind kind) {
    ParamReport report;
    report.kind = kind;
    for (ParamSpec& spec : pyramid_param_specs(cfg, kind)) {
        std::int64_t n = 1;
        for (std::int64_t d : spec.dims) {
            n *= d;
        }
        report.subtotals[spec.component] += n;
        report.total += n;
        report.rows.push_back(ParamRow{std::move(spec.name), std::move(spec.dims), n, std::move(spec.component)});
    }
    return report;
}

FpnConfig retinanet_fpn_preset() {
    FpnConfig cfg;
    cfg.min_level = 3;
    cfg.max_level = 7;
    cfg.channels = 256;
    cfg.backbone_channels = {512, 1024, 2048};
    cfg.extra_levels = ExtraLevels::strided_conv;
    return cfg;
}

FpnConfig resnet50_pyramid_preset(ExtraLevels extra) {
    FpnConfig cfg;
    cfg.min_level = 2;
    cfg.max_level = extra == ExtraLevels::off ? 5 : 7;
    cfg.channels = 256;
    cfg.backbone_channels = {256, 512, 1024, 2048};
    cfg.extra_levels = extra;
    return cfg;
}

std::string parameter_reconciliation_report() {
    struct Published {
        BuilderKind kind;
        double millions;
    };
    const Published published[] = {{BuilderKind::fpn, 8.00},
                                   {BuilderKind::top_down, 8.52},
                                   {BuilderKind::bottom_up, 8.52},
                                   {BuilderKind::fusing_splitting, 6.49},
                                   {BuilderKind::mfpn, 11.47}};
    struct Candidate {
        const char* label;
        FpnConfig cfg;
    };
    const Candidate candidates[] = {
        {"P3-P7 (C3-C5 + P6/P7)", retinanet_fpn_preset()},
        {"P2-P5 (C2-C5)", resnet50_pyramid_preset(ExtraLevels::off)},
        {"P2-P7 (C2-C5 + P6/P7)", resnet50_pyramid_preset(ExtraLevels::strided_conv)},
    };

    std::ostringstream os;
    os << "parameter reconciliation (millions, biases included)\n";
    os << std::left << std::setw(18) << "builder" << std::right << std::setw(10) << "published";
    for (const Candidate& c : candidates) {
        os << std::setw(24) << c.label;
    }
    os << "\n";
    for (const Published& p : published) {
        os << std::left << std::setw(18) << to_string(p.kind) << std::right << std::setw(10) << std::fixed
           << std::setprecision(2) << p.millions;
        for (const Candidate& c : candidates) {
            std::string cell = "n/a";
            try {
                cell = millions(count_params(c.cfg, p.kind).total);
            } catch (const std::invalid_argument&) {
                // fusing-splitting is defined for exactly four backbone levels
            }
            os << std::setw(24) << cell;
        }
        os << "\n";
    }
    return os.str();
}

std::string FlowMatrix::to_text() const {
    std::ostringstream os;
    os << "flow matrix for " << to_string(kind) << " (rows: output level, cols: backbone level)\n";
    os << std::setw(6) << "";
    for (int j : backbone_levels) {
        os << std::setw(14) << ("C" + std::to_string(j));
    }
    os << "\n";
    for (std::size_t r = 0; r < output_levels.size(); ++r) {
        os << std::setw(6) << ("F" + std::to_string(output_levels[r]));
        for (std::size_t c = 0; c < backbone_levels.size(); ++c) {
            std::ostringstream cell;
            cell << std::scientific << std::setprecision(2) << magnitude[r][c] << (reaches[r][c] ? "*" : " ");
            os << std::setw(14) << cell.str();
        }
        os << "\n";
    }
    return os.str();
}

std::string FlowMatrix::to_csv() const {
    std::ostringstream os;
    os << "output_level,backbone_level,magnitude,reaches\n";
    os << std::setprecision(17);
    for (std::size_t r = 0; r < output_levels.size(); ++r) {
        for (std::size_t c = 0; c < backbone_levels.size(); ++c) {
            os << output_levels[r] << "," << backbone_levels[c] << "," << magnitude[r][c] << ","
               << (reaches[r][c] ? 1 : 0) << "\n";
        }
    }
    return os.str();
}

FlowMatrix flow_matrix(BuilderKind kind, const FpnConfig& cfg, std::uint64_t seed, int input_size) {
    cfg.validate();
    if (input_size % (1 << cfg.max_level) != 0) {
        throw std::invalid_argument("flow probe input size must be divisible by 2^max_level");
    }
    WeightStore weights;
    add_pyramid_weights(weights, cfg, kind);
    init_glorot_uniform(weights, seed);

    std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ULL);
    BackboneFeatures feats;
    for (int level : cfg.levels()) {
        const std::int64_t side = input_size >> level;
        feats.projected[level] = random_tensor(Shape{1, cfg.channels, side, side}, rng).set_requires_grad();
    }

    FlowMatrix fm;
    fm.kind = kind;
    fm.output_levels = cfg.levels();
    fm.backbone_levels = cfg.levels();
    for (int out_level : fm.output_levels) {
        for (auto& [level, t] : feats.projected) {
            t.zero_grad();
        }
        Graph g;
        const PyramidSet pyr = build_pyramid(g, kind, feats, cfg, weights);
        g.backward(sum_squares(g, pyr.maps.at(out_level)));
        std::vector<double> row_mag;
        std::vector<bool> row_reach;
        for (int level : fm.backbone_levels) {
            double m = 0.0;
            for (double v : feats.projected.at(level).grad()) {
                m = std::max(m, std::abs(v));
            }
            row_mag.push_back(m);
            row_reach.push_back(m > kFlowThreshold);
        }
        fm.magnitude.push_back(std::move(row_mag));
        fm.reaches.push_back(std::move(row_reach));
    }
    return fm;
}

bool GradCheckReport::passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.pass; });
}

double GradCheckReport::worst() const {
    double w = 0.0;
    for (const GradCheckEntry& e : entries) {
        w = std::max(w, e.max_rel_error);
    }
    return w;
}

std::string GradCheckReport::to_text() const {
    std::ostringstream os;
    for (const GradCheckEntry& e : entries) {
        os << (e.pass ? "  ok    " : "  FAIL  ") << std::left << std::setw(26) << e.name << std::right
           << " rel " << std::scientific << std::setprecision(3) << e.max_rel_error << "  abs " << e.max_abs_error
           << "\n";
    }
    os << (passed() ? "PASS" : "FAIL") << " worst rel error " << std::scientific << std::setprecision(3) << worst()
       << " (tolerance " << tolerance << ")\n";
    return os.str();
}

GradCheckReport grad_check(const LossFn& loss_fn, std::vector<std::pair<std::string, Tensor>> leaves,
                           double tolerance, double step) {
    for (auto& [name, t] : leaves) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    std::vector<std::vector<double>> analytic;
    {
        Graph g;
        const Tensor loss = loss_fn(g);
        if (loss.numel() != 1) {
            throw std::invalid_argument("grad_check needs a scalar loss, got " + loss.shape().str());
        }
        g.backward(loss);
        for (auto& [name, t] : leaves) {
            std::vector<double> grad(static_cast<std::size_t>(t.numel()), 0.0);
            if (t.has_grad()) {
                std::copy(t.grad().begin(), t.grad().end(), grad.begin());
            }
            analytic.push_back(std::move(grad));
        }
    }

    auto evaluate = [&loss_fn] {
        Graph g;
        return loss_fn(g).item();
    };

    GradCheckReport report;
    report.tolerance = tolerance;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Tensor t = leaves[li].second;
        auto values = t.mutable_values();
        double max_diff = 0.0;
        double max_analytic = 0.0;
        double max_numeric = 0.0;
        for (std::size_t k = 0; k < values.size(); ++k) {
            const double saved = values[k];
            values[k] = saved + step;
            const double up = evaluate();
            values[k] = saved - step;
            const double down = evaluate();
            values[k] = saved;
            const double numeric = (up - down) / (2.0 * step);
            max_diff = std::max(max_diff, std::abs(numeric - analytic[li][k]));
            max_analytic = std::max(max_analytic, std::abs(analytic[li][k]));
            max_numeric = std::max(max_numeric, std::abs(numeric));
        }
        GradCheckEntry e;
        e.name = leaves[li].first;
        e.max_abs_error = max_diff;
        e.max_rel_error = max_diff / std::max({max_analytic, max_numeric, 1e-6});
        e.pass = e.max_rel_error < tolerance;
        report.entries.push_back(std::move(e));
    }
    return report;
}

GradCheckReport grad_check_builder(BuilderKind kind, std::uint64_t seed, double tolerance) {
    FpnConfig cfg;
    cfg.min_level = 2;
    cfg.max_level = 5;
    cfg.channels = 2;
    cfg.backbone_channels = {2, 3, 2, 3};
    constexpr int kInput = 32;  // level-2 grid 8x8

    WeightStore weights;
    add_pyramid_weights(weights, cfg, kind);
    init_glorot_uniform(weights, seed);
    std::mt19937_64 rng(seed * 7919 + 17);
    std::uniform_real_distribution<double> bias_dist(-0.5, 0.5);
    for (auto& [name, p] : weights) {
        if (p.dims.size() == 1) {
            for (double& v : p.tensor.mutable_values()) {
                v = bias_dist(rng);
            }
        }
    }

    BackboneFeatures raw;
    LevelMap coeffs;
    for (int level : cfg.levels()) {
        const std::int64_t side = kInput >> level;
        raw.raw[level] = random_tensor(Shape{1, cfg.backbone_width(level), side, side}, rng);
        coeffs[level] = random_tensor(Shape{1, cfg.channels, side, side}, rng);
    }

    std::vector<std::pair<std::string, Tensor>> leaves;
    for (auto& [name, p] : weights) {
        leaves.emplace_back(std::string(to_string(kind)) + ":" + name, p.tensor);
    }
    for (auto& [level, t] : raw.raw) {
        leaves.emplace_back(std::string(to_string(kind)) + ":G" + std::to_string(level), t);
    }

    auto loss_fn = [&](Graph& g) {
        const BackboneFeatures feats = apply_laterals(g, raw, cfg, weights);
        const PyramidSet pyr = build_pyramid(g, kind, feats, cfg, weights);
        std::vector<Tensor> terms;
        for (const auto& [level, map] : pyr.maps) {
            terms.push_back(weighted_sum(g, map, coeffs.at(level)));
            terms.push_back(scale(g, sum_squares(g, map), 0.25));
        }
        return add(g, terms);
    };
    return grad_check(loss_fn, std::move(leaves), tolerance);
}

GradCheckReport grad_check_ops(std::uint64_t seed, double tolerance) {
    std::mt19937_64 rng(seed + 101);
    GradCheckReport all;
    all.tolerance = tolerance;
    auto absorb = [&all](const GradCheckReport& r) {
        all.entries.insert(all.entries.end(), r.entries.begin(), r.entries.end());
    };
    auto probe = [&rng](Shape s) { return random_tensor(s, rng); };

    for (int k : {1, 3}) {
        Tensor x = probe(Shape{2, 3, 5, 4});
        Tensor w = probe(Shape{2, 3, k, k});
        Tensor b = probe(Shape{1, 2, 1, 1});
        Tensor r = probe(Shape{2, 2, 5, 4});
        const std::string tag = "conv" + std::to_string(k) + "x" + std::to_string(k);
        absorb(grad_check([&](Graph& g) { return weighted_sum(g, conv2d(g, x, w, b), r); },
                          {{tag + ".x", x}, {tag + ".w", w}, {tag + ".b", b}}, tolerance));
    }
    {
        Tensor x = probe(Shape{1, 2, 3, 3});
        Tensor r = probe(Shape{1, 2, 6, 6});
        absorb(grad_check([&](Graph& g) { return weighted_sum(g, upsample_nearest_x2(g, x), r); },
                          {{"upsample_nearest_x2", x}}, tolerance));
    }
    {
        Tensor x = probe(Shape{1, 1, 6, 6});
        Tensor r = probe(Shape{1, 1, 3, 3});
        absorb(grad_check([&](Graph& g) { return weighted_sum(g, maxpool_2x2(g, x), r); }, {{"maxpool_2x2", x}},
                          tolerance));
    }
    {
        Tensor x = probe(Shape{2, 3, 4, 4});
        Tensor r = probe(Shape{2, 3, 1, 1});
        absorb(grad_check([&](Graph& g) { return weighted_sum(g, global_avg_pool(g, x), r); },
                          {{"global_avg_pool", x}}, tolerance));
    }
    {
        Tensor a = probe(Shape{1, 2, 4, 4});
        Tensor b = probe(Shape{1, 2, 4, 4});
        Tensor c = probe(Shape{1, 2, 1, 1});
        Tensor r = probe(Shape{1, 2, 4, 4});
        absorb(grad_check(
            [&](Graph& g) {
                const Tensor xs[] = {a, b, c};
                return weighted_sum(g, add(g, xs), r);
            },
            {{"add.a", a}, {"add.b", b}, {"add.broadcast", c}}, tolerance));
    }
    {
        Tensor a = probe(Shape{2, 2, 3, 3});
        Tensor b = probe(Shape{2, 1, 3, 3});
        Tensor r = probe(Shape{2, 3, 3, 3});
        absorb(grad_check([&](Graph& g) { return weighted_sum(g, concat_channels(g, a, b), r); },
                          {{"concat_channels.a", a}, {"concat_channels.b", b}}, tolerance));
    }
    {
        Tensor x = probe(Shape{1, 2, 4, 4});
        Tensor r = probe(Shape{1, 2, 4, 4});
        absorb(grad_check([&](Graph& g) { return weighted_sum(g, relu(g, x), r); }, {{"relu", x}}, tolerance));
        absorb(grad_check([&](Graph& g) { return weighted_sum(g, sigmoid(g, x), r); }, {{"sigmoid", x}},
                          tolerance));
        absorb(grad_check([&](Graph& g) { return weighted_sum(g, scale(g, x, -1.7), r); }, {{"scale", x}},
                          tolerance));
        absorb(grad_check([&](Graph& g) { return sum(g, x); }, {{"sum", x}}, tolerance));
        absorb(grad_check([&](Graph& g) { return sum_squares(g, x); }, {{"sum_squares", x}}, tolerance));
    }
    {
        Tensor p = random_tensor(Shape{1, 1, 4, 4}, rng, 0.05, 0.95);
        Tensor t = random_tensor(Shape{1, 1, 4, 4}, rng, 0.0, 1.0);
        Tensor w = random_tensor(Shape{1, 1, 4, 4}, rng, 1.0, 5.0);
        absorb(grad_check([&](Graph& g) { return weighted_bce_sum(g, p, t, w); }, {{"weighted_bce_sum", p}},
                          tolerance));
    }
    return all;
}

}  // namespace mfpn

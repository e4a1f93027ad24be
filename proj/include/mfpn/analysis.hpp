// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mfpn/pyramid.hpp"
#include "mfpn/tensor.hpp"

namespace mfpn {

// ---- parameter counting -------------------------------------------------

struct ParamRow {
    std::string name;
    std::vector<std::int64_t> dims;
    std::int64_t count = 0;
    std::string component;
};

struct ParamReport {
    BuilderKind kind = BuilderKind::mfpn;
    std::vector<ParamRow> rows;
    std::map<std::string, std::int64_t> subtotals;  // keyed by component
    std::int64_t total = 0;

    std::int64_t subtotal(const std::string& component) const;
    std::string to_text() const;
    nlohmann::ordered_json to_json() const;
};

/// Derived from weight shapes alone; no tensors are allocated.
ParamReport count_params(const FpnConfig& cfg, BuilderKind kind);

/// RetinaNet-style neck: levels 3..7 over ResNet-50 C3..C5 (512/1024/2048),
/// C = 256, P6/P7 as stride-2 3x3 convs.
FpnConfig retinanet_fpn_preset();
/// Four-level neck over ResNet-50 C2..C5 (256/512/1024/2048), C = 256.
FpnConfig resnet50_pyramid_preset(ExtraLevels extra = ExtraLevels::off);

/// Side-by-side counts for the published parameter column under several
/// candidate configurations.
std::string parameter_reconciliation_report();

// ---- flow analysis --------------------------------------------------------

struct FlowMatrix {
    BuilderKind kind = BuilderKind::mfpn;
    std::vector<int> output_levels;
    std::vector<int> backbone_levels;
    /// max |d ||F_i||^2 / d C_j| over the probe.
    std::vector<std::vector<double>> magnitude;
    std::vector<std::vector<bool>> reaches;

    std::string to_text() const;
    std::string to_csv() const;
};

inline constexpr double kFlowThreshold = 1e-12;

/// Random projected features (spatial `input_size / 2^i`) and random
/// weights with zero biases, all from `seed`.
FlowMatrix flow_matrix(BuilderKind kind, const FpnConfig& cfg, std::uint64_t seed, int input_size = 32);

// ---- finite-difference checking -----------------------------------------

struct GradCheckEntry {
    std::string name;
    double max_abs_error = 0.0;
    double max_rel_error = 0.0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 0.0;

    bool passed() const;
    double worst() const;
    std::string to_text() const;
};

using LossFn = std::function<Tensor(Graph&)>;

/// Compares analytic gradients against central differences for every
/// element of every listed leaf. Per leaf the error is
/// max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-6).
/// Throws std::invalid_argument for a non-scalar loss.
GradCheckReport grad_check(const LossFn& loss_fn, std::vector<std::pair<std::string, Tensor>> leaves,
                           double tolerance, double step = 1e-5);

/// End-to-end check of one builder (laterals included) on a small random
/// problem: widths <= 3, level-2 grid 8x8.
GradCheckReport grad_check_builder(BuilderKind kind, std::uint64_t seed, double tolerance = 1e-5);

/// Every tensor op on small random inputs.
GradCheckReport grad_check_ops(std::uint64_t seed, double tolerance = 1e-5);

}  // namespace mfpn

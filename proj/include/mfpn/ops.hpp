// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations. Each records itself on the given graph.

#pragma once

#include <span>

#include "mfpn/tensor.hpp"

namespace mfpn {

/// Stride-1 convolution. Weight is (c_out, c_in, k, k) with k in {1, 3};
/// k = 3 uses zero padding 1 so spatial size is preserved. Bias is
/// (1, c_out, 1, 1) or undefined.
Tensor conv2d(Graph& g, const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor upsample_nearest_x2(Graph& g, const Tensor& x);

/// 2x2 window, stride 2. Ties send the gradient to the first cell in
/// row-major window order.
Tensor maxpool_2x2(Graph& g, const Tensor& x);

Tensor global_avg_pool(Graph& g, const Tensor& x);

/// Elementwise sum. An operand of shape (n, c, 1, 1) is broadcast over the
/// spatial grid of the others.
Tensor add(Graph& g, std::span<const Tensor> xs);
Tensor add(Graph& g, const Tensor& a, const Tensor& b);

Tensor concat_channels(Graph& g, const Tensor& a, const Tensor& b);

Tensor relu(Graph& g, const Tensor& x);
Tensor sigmoid(Graph& g, const Tensor& x);
Tensor scale(Graph& g, const Tensor& x, double factor);

/// Reductions to a (1,1,1,1) tensor.
Tensor sum(Graph& g, const Tensor& x);
Tensor sum_squares(Graph& g, const Tensor& x);
/// sum(x * coeffs); coeffs is a constant of x's shape.
Tensor weighted_sum(Graph& g, const Tensor& x, const Tensor& coeffs);

/// sum over cells of w * BCE(pred, target). Targets and weights are
/// constants; predictions are clamped to [1e-12, 1 - 1e-12] inside the log.
Tensor weighted_bce_sum(Graph& g, const Tensor& pred, const Tensor& target, const Tensor& weights);

}  // namespace mfpn

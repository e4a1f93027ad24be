// SPDX-License-Identifier: Apache-2.0
//
// Dense rank-4 tensors and the tape that records operations on them for
// reverse-mode differentiation.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mfpn {

/// (batch, channels, rows, cols); every extent is at least 1.
struct Shape {
    std::int64_t n = 1;
    std::int64_t c = 1;
    std::int64_t h = 1;
    std::int64_t w = 1;

    std::int64_t numel() const { return n * c * h * w; }
    std::int64_t plane() const { return h * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

class Graph;

namespace detail {
struct TensorNode {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until something accumulates into it
    bool requires_grad = false;
    std::uint64_t graph_id = 0;  // 0 marks a leaf
};
}  // namespace detail

/// Shared handle to a tensor node. Copies alias the same storage; use
/// clone() for an independent leaf.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::int64_t numel() const { return shape().numel(); }

    std::span<const double> values() const;
    std::span<double> mutable_values();
    double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;
    double& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w);
    double item() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on = true);
    bool has_grad() const;
    std::span<const double> grad() const;
    /// Zero-filled on first use; backward rules add into this.
    std::span<double> grad_accumulator() const;
    void zero_grad();

    bool is_leaf() const;
    std::uint64_t graph_id() const;
    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    Tensor clone() const;

private:
    friend class Graph;
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    void require_defined() const;

    std::shared_ptr<detail::TensorNode> node_;
};

/// Operation tape. Leaves may feed any graph; every tensor produced by an
/// operation belongs to exactly one graph and cannot be combined with
/// tensors produced by another.
class Graph {
public:
    /// Receives the gradient of the record's output; adds into operand
    /// gradients through Tensor::grad_accumulator().
    using BackwardFn = std::function<void(std::span<const double> grad_out)>;

    Graph();
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) noexcept = default;
    Graph& operator=(Graph&&) noexcept = default;

    std::uint64_t id() const { return id_; }
    std::size_t size() const { return records_.size(); }

    /// Appends an operation record. This is the extension point every op
    /// in ops.hpp goes through.
    Tensor emit(std::string_view op, std::vector<Tensor> inputs, Shape out_shape,
                std::vector<double> out_values, BackwardFn backward);

    /// Propagates d(loss)/d(.) to every reachable tensor that requires a
    /// gradient. Leaf gradients accumulate across calls; intermediate
    /// gradients are reset at the start of each call.
    void backward(const Tensor& loss);

    /// Structural reachability: true if `output` was computed (transitively)
    /// from `input` on this tape.
    bool depends_on(const Tensor& output, const Tensor& input) const;

    std::vector<std::string> op_names() const;

private:
    struct Record {
        std::string op;
        std::vector<Tensor> inputs;
        Tensor output;
        BackwardFn backward;
    };

    std::uint64_t id_;
    std::vector<Record> records_;
};

}  // namespace mfpn

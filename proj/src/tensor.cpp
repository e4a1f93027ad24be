// SPDX-License-Identifier: Apache-2.0

#include "mfpn/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace mfpn {

namespace {

std::atomic<std::uint64_t> g_next_graph_id{1};

void validate_shape(const Shape& s) {
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
        throw std::invalid_argument("tensor extents must be >= 1, got " + s.str());
    }
}

}  // namespace

std::string Shape::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::TensorNode>()) {
    validate_shape(shape);
    node_->shape = shape;
    node_->values.assign(static_cast<std::size_t>(shape.numel()), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : node_(std::make_shared<detail::TensorNode>()) {
    validate_shape(shape);
    if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
        throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                    " does not match shape " + shape.str());
    }
    node_->shape = shape;
    node_->values = std::move(values);
}

void Tensor::require_defined() const {
    if (!node_) {
        throw std::logic_error("use of an undefined tensor");
    }
}

const Shape& Tensor::shape() const {
    require_defined();
    return node_->shape;
}

std::span<const double> Tensor::values() const {
    require_defined();
    return node_->values;
}

std::span<double> Tensor::mutable_values() {
    require_defined();
    return node_->values;
}

double Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    const Shape& s = shape();
    if (n < 0 || n >= s.n || c < 0 || c >= s.c || h < 0 || h >= s.h || w < 0 || w >= s.w) {
        throw std::out_of_range("tensor index out of range for shape " + s.str());
    }
    return node_->values[static_cast<std::size_t>(((n * s.c + c) * s.h + h) * s.w + w)];
}

double& Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    const Shape& s = shape();
    if (n < 0 || n >= s.n || c < 0 || c >= s.c || h < 0 || h >= s.h || w < 0 || w >= s.w) {
        throw std::out_of_range("tensor index out of range for shape " + s.str());
    }
    return node_->values[static_cast<std::size_t>(((n * s.c + c) * s.h + h) * s.w + w)];
}

double Tensor::item() const {
    if (numel() != 1) {
        throw std::invalid_argument("item() needs a single-element tensor, got " + shape().str());
    }
    return node_->values[0];
}

bool Tensor::requires_grad() const {
    require_defined();
    return node_->requires_grad;
}

Tensor& Tensor::set_requires_grad(bool on) {
    require_defined();
    node_->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const {
    require_defined();
    return !node_->grad.empty();
}

std::span<const double> Tensor::grad() const {
    require_defined();
    return node_->grad;
}

std::span<double> Tensor::grad_accumulator() const {
    require_defined();
    if (node_->grad.empty()) {
        node_->grad.assign(node_->values.size(), 0.0);
    }
    return node_->grad;
}

void Tensor::zero_grad() {
    require_defined();
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

bool Tensor::is_leaf() const {
    require_defined();
    return node_->graph_id == 0;
}

std::uint64_t Tensor::graph_id() const {
    require_defined();
    return node_->graph_id;
}

Tensor Tensor::clone() const {
    Tensor copy(shape(), std::vector<double>(node_->values));
    copy.node_->requires_grad = node_->requires_grad;
    return copy;
}

Graph::Graph() : id_(g_next_graph_id.fetch_add(1)) {}

Tensor Graph::emit(std::string_view op, std::vector<Tensor> inputs, Shape out_shape,
                   std::vector<double> out_values, BackwardFn backward) {
    bool needs_grad = false;
    for (const Tensor& in : inputs) {
        in.require_defined();
        const std::uint64_t owner = in.node_->graph_id;
        if (owner != 0 && owner != id_) {
            throw std::logic_error(std::string(op) + ": operand belongs to a different graph");
        }
        needs_grad = needs_grad || in.node_->requires_grad;
    }
    Tensor out(out_shape, std::move(out_values));
    out.node_->graph_id = id_;
    out.node_->requires_grad = needs_grad;
    records_.push_back(Record{std::string(op), std::move(inputs), out, std::move(backward)});
    return out;
}

void Graph::backward(const Tensor& loss) {
    if (!loss.defined() || loss.node_->graph_id != id_) {
        throw std::logic_error("backward called on a tensor detached from this graph");
    }
    if (loss.numel() != 1) {
        throw std::invalid_argument("backward needs a scalar loss, got shape " + loss.shape().str());
    }
    for (Record& r : records_) {
        auto& g = r.output.node_->grad;
        if (r.output.node_->requires_grad) {
            g.assign(r.output.node_->values.size(), 0.0);
        } else {
            g.clear();
        }
    }
    if (!loss.node_->requires_grad) {
        return;
    }
    loss.node_->grad[0] = 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        if (it->output.node_->requires_grad && it->backward) {
            it->backward(it->output.node_->grad);
        }
    }
}

bool Graph::depends_on(const Tensor& output, const Tensor& input) const {
    output.require_defined();
    input.require_defined();
    std::unordered_map<const detail::TensorNode*, std::size_t> producer;
    for (std::size_t i = 0; i < records_.size(); ++i) {
        producer.emplace(records_[i].output.node_.get(), i);
    }
    std::vector<const detail::TensorNode*> stack{output.node_.get()};
    std::unordered_set<const detail::TensorNode*> seen;
    while (!stack.empty()) {
        const detail::TensorNode* node = stack.back();
        stack.pop_back();
        if (node == input.node_.get()) {
            return true;
        }
        if (!seen.insert(node).second) {
            continue;
        }
        auto it = producer.find(node);
        if (it == producer.end()) {
            continue;
        }
        for (const Tensor& in : records_[it->second].inputs) {
            stack.push_back(in.node_.get());
        }
    }
    return false;
}

std::vector<std::string> Graph::op_names() const {
    std::vector<std::string> names;
    names.reserve(records_.size());
    for (const Record& r : records_) {
        names.push_back(r.op);
    }
    return names;
}

}  // namespace mfpn

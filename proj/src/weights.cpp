// SPDX-License-Identifier: Apache-2.0

#include "mfpn/weights.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace mfpn {

Shape shape_from_dims(std::span<const std::int64_t> dims) {
    switch (dims.size()) {
        case 1:
            return Shape{1, dims[0], 1, 1};
        case 4:
            return Shape{dims[0], dims[1], dims[2], dims[3]};
        default:
            throw std::invalid_argument("parameter rank must be 1 or 4, got " +
                                        std::to_string(dims.size()));
    }
}

std::int64_t Parameter::count() const {
    std::int64_t n = 1;
    for (std::int64_t d : dims) {
        n *= d;
    }
    return n;
}

WeightStore::WeightStore(const WeightStore& other) { *this = other; }

WeightStore& WeightStore::operator=(const WeightStore& other) {
    if (this == &other) {
        return *this;
    }
    params_.clear();
    for (const auto& [name, p] : other.params_) {
        Parameter copy = p;
        copy.tensor = p.tensor.clone();
        params_.emplace(name, std::move(copy));
    }
    return *this;
}

Parameter& WeightStore::add(std::string name, std::vector<std::int64_t> dims, bool trainable) {
    if (params_.contains(name)) {
        throw std::invalid_argument("duplicate parameter name: " + name);
    }
    Tensor t(shape_from_dims(dims));
    t.set_requires_grad(trainable);
    Parameter p{name, std::move(dims), std::move(t), trainable};
    return params_.emplace(std::move(name), std::move(p)).first->second;
}

bool WeightStore::contains(std::string_view name) const { return params_.find(name) != params_.end(); }

const Parameter& WeightStore::at(std::string_view name) const {
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw std::invalid_argument("missing weight: " + std::string(name));
    }
    return it->second;
}

Parameter& WeightStore::at(std::string_view name) {
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw std::invalid_argument("missing weight: " + std::string(name));
    }
    return it->second;
}

std::int64_t WeightStore::count() const {
    std::int64_t total = 0;
    for (const auto& [name, p] : params_) {
        total += p.count();
    }
    return total;
}

void WeightStore::zero_grad() {
    for (auto& [name, p] : params_) {
        p.tensor.zero_grad();
    }
}

void WeightStore::set_trainable(bool on) {
    for (auto& [name, p] : params_) {
        p.trainable = on;
        p.tensor.set_requires_grad(on);
    }
}

void add_conv(WeightStore& store, const std::string& prefix, std::int64_t c_out, std::int64_t c_in,
              std::int64_t kernel) {
    if (kernel != 1 && kernel != 3) {
        throw std::invalid_argument("conv kernel must be 1 or 3 for " + prefix);
    }
    store.add(prefix + ".weight", {c_out, c_in, kernel, kernel});
    store.add(prefix + ".bias", {c_out});
}

ConvWeights conv_weights(const WeightStore& store, const std::string& prefix) {
    return ConvWeights{store.tensor(prefix + ".weight"), store.tensor(prefix + ".bias")};
}

void init_glorot_uniform(WeightStore& store, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& [name, p] : store) {
        auto values = p.tensor.mutable_values();
        if (p.dims.size() != 4) {
            std::fill(values.begin(), values.end(), 0.0);
            continue;
        }
        const double receptive = static_cast<double>(p.dims[2] * p.dims[3]);
        const double fan_in = static_cast<double>(p.dims[1]) * receptive;
        const double fan_out = static_cast<double>(p.dims[0]) * receptive;
        const double a = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-a, a);
        for (double& v : values) {
            v = dist(rng);
        }
    }
}

bool identical(const WeightStore& a, const WeightStore& b) {
    if (a.size() != b.size()) {
        return false;
    }
    auto ib = b.begin();
    for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib) {
        if (ia->first != ib->first || ia->second.dims != ib->second.dims) {
            return false;
        }
        const auto va = ia->second.tensor.values();
        const auto vb = ib->second.tensor.values();
        if (!std::equal(va.begin(), va.end(), vb.begin(), vb.end())) {
            return false;
        }
    }
    return true;
}

}  // namespace mfpn

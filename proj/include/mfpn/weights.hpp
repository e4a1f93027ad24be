// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mfpn/tensor.hpp"

namespace mfpn {

/// Maps logical dims onto the rank-4 tensor layout: a rank-1 {c} becomes
/// (1, c, 1, 1) so biases broadcast over channels; rank 4 maps 1:1.
Shape shape_from_dims(std::span<const std::int64_t> dims);

struct Parameter {
    std::string name;
    std::vector<std::int64_t> dims;
    Tensor tensor;
    bool trainable = true;

    std::int64_t count() const;
};

/// Named parameters kept in name order. Copying a store deep-copies every
/// tensor, so two stores never alias.
class WeightStore {
public:
    WeightStore() = default;
    WeightStore(const WeightStore& other);
    WeightStore& operator=(const WeightStore& other);
    WeightStore(WeightStore&&) noexcept = default;
    WeightStore& operator=(WeightStore&&) noexcept = default;

    /// Zero-initialised. Throws on a duplicate name.
    Parameter& add(std::string name, std::vector<std::int64_t> dims, bool trainable = true);

    bool contains(std::string_view name) const;
    const Parameter& at(std::string_view name) const;
    Parameter& at(std::string_view name);
    const Tensor& tensor(std::string_view name) const { return at(name).tensor; }

    std::size_t size() const { return params_.size(); }
    std::int64_t count() const;
    void zero_grad();
    void set_trainable(bool on);

    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }

private:
    std::map<std::string, Parameter, std::less<>> params_;
};

/// Adds `<prefix>.weight` (c_out, c_in, k, k) and `<prefix>.bias` (c_out).
void add_conv(WeightStore& store, const std::string& prefix, std::int64_t c_out, std::int64_t c_in,
              std::int64_t kernel);

struct ConvWeights {
    Tensor weight;
    Tensor bias;
};

/// Throws std::invalid_argument naming the missing parameter.
ConvWeights conv_weights(const WeightStore& store, const std::string& prefix);

/// Weights uniform in [-a, a], a = sqrt(6 / (fan_in + fan_out)); biases zero.
/// Parameters are visited in name order from a single seeded stream.
void init_glorot_uniform(WeightStore& store, std::uint64_t seed);

/// Exact equality of names, dims and values.
bool identical(const WeightStore& a, const WeightStore& b);

}  // namespace mfpn

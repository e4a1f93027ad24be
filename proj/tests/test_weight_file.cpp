// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <cstring>
#include <sstream>

#include "doctest.h"
#include "mfpn/training.hpp"
#include "mfpn/weight_file.hpp"
#include "support.hpp"

using namespace mfpn;

namespace {

// Byte-level encoder written independently of the library.
void le(std::string& s, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::string encode_one(const std::string& name, const std::vector<std::uint64_t>& dims, const std::vector<double>& values) {
    std::string s = "MFPW";
    le(s, 1, 4);
    le(s, 1, 4);
    le(s, name.size(), 4);
    s += name;
    le(s, dims.size(), 4);
    for (auto d : dims) le(s, d, 8);
    for (double v : values) le(s, std::bit_cast<std::uint64_t>(v), 8);
    return s;
}

}  // namespace

TEST_CASE("encoding matches the byte layout") {
    const std::vector<double> v{1.0, -2.5, 0.1};
    std::ostringstream os;
    write_arrays(os, {NamedArray{"head.bias", {3}, v}});
    CHECK(os.str() == encode_one("head.bias", {3}, v));

    std::istringstream in(encode_one("x", {1, 2}, {3.0, 4.0}));
    const auto arrays = read_arrays(in);
    REQUIRE(arrays.size() == 1);
    CHECK(arrays[0] == NamedArray{"x", {1, 2}, {3.0, 4.0}});
}

TEST_CASE("model weights survive write, read, write byte-identically") {
    ModelConfig cfg;
    cfg.channels = 4;
    const TrainState st = make_train_state(cfg, 0.05, 12);
    std::ostringstream first;
    write_weights(first, st.weights);
    std::istringstream in(first.str());
    const WeightStore back = read_weights(in);
    CHECK(identical(back, st.weights));
    std::ostringstream second;
    write_weights(second, back);
    CHECK(first.str() == second.str());

    const auto dir = test::scratch_dir("weights");
    save_weights(dir / "a.mfpw", st.weights);
    save_weights(dir / "b.mfpw", load_weights(dir / "a.mfpw"));
    CHECK(test::slurp(dir / "a.mfpw") == test::slurp(dir / "b.mfpw"));

    WeightStore target;
    add_model_weights(target, cfg);
    load_weights_into(dir / "a.mfpw", target);
    CHECK(identical(target, st.weights));
}

TEST_CASE("special values round trip") {
    const std::vector<double> v{0.0, -0.0, 1e-310, std::numeric_limits<double>::max(),
                                std::numeric_limits<double>::infinity()};
    std::stringstream ss;
    write_arrays(ss, {NamedArray{"s", {5}, v}, NamedArray{"", {}, {7.0}}});
    const auto back = read_arrays(ss);
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < v.size(); ++i)
        CHECK(std::bit_cast<std::uint64_t>(back[0].values[i]) == std::bit_cast<std::uint64_t>(v[i]));
    CHECK(back[1].values == std::vector<double>{7.0});
}

TEST_CASE("malformed files are rejected") {
    const std::string good = encode_one("w", {2}, {1.0, 2.0});
    {
        std::istringstream in("MFPX" + good.substr(4));
        CHECK_THROWS_WITH_AS(read_arrays(in), doctest::Contains("magic"), std::runtime_error);
    }
    {
        std::string bad = good;
        bad[4] = 2;
        std::istringstream in(bad);
        CHECK_THROWS_WITH_AS(read_arrays(in), doctest::Contains("version"), std::runtime_error);
    }
    for (std::size_t cut : {std::size_t{2}, std::size_t{10}, std::size_t{15}, good.size() - 1}) {
        std::istringstream in(good.substr(0, cut));
        CHECK_THROWS_AS(read_arrays(in), std::runtime_error);
    }
    std::ostringstream os;
    CHECK_THROWS_AS(write_arrays(os, {NamedArray{"w", {3}, {1.0}}}), std::invalid_argument);
}

TEST_CASE("loading into a store checks names and shapes") {
    const auto dir = test::scratch_dir("weights_into");
    WeightStore a;
    add_conv(a, "c", 2, 1, 3);
    save_weights(dir / "a.mfpw", a);
    WeightStore other_shape;
    add_conv(other_shape, "c", 2, 2, 3);
    CHECK_THROWS_AS(load_weights_into(dir / "a.mfpw", other_shape), std::runtime_error);
    WeightStore other_name;
    add_conv(other_name, "d", 2, 1, 3);
    CHECK_THROWS_AS(load_weights_into(dir / "a.mfpw", other_name), std::runtime_error);
    CHECK_THROWS_AS(load_weights(dir / "missing.mfpw"), std::runtime_error);
}

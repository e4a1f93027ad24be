// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "mfpn/analysis.hpp"
#include "mfpn/ops.hpp"
#include "support.hpp"

using namespace mfpn;
using mfpn::test::all_equal;
using mfpn::test::max_abs_diff;
using mfpn::test::random_tensor;
using mfpn::test::to_vec;

namespace {

// Direct zero-padded convolution, written without reference to the library kernel.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
    const Shape xs = x.shape();
    const Shape ws = w.shape();
    const int k = static_cast<int>(ws.h);
    const int pad = k / 2;
    Tensor out(Shape{xs.n, ws.n, xs.h, xs.w});
    for (int n = 0; n < xs.n; ++n)
        for (int o = 0; o < ws.n; ++o)
            for (int y = 0; y < xs.h; ++y)
                for (int xx = 0; xx < xs.w; ++xx) {
                    double s = b.defined() ? b.at(0, o, 0, 0) : 0.0;
                    for (int c = 0; c < xs.c; ++c)
                        for (int i = 0; i < k; ++i)
                            for (int j = 0; j < k; ++j) {
                                const int sy = y + i - pad;
                                const int sx = xx + j - pad;
                                if (sy >= 0 && sy < xs.h && sx >= 0 && sx < xs.w) {
                                    s += w.at(o, c, i, j) * x.at(n, c, sy, sx);
                                }
                            }
                    out.at(n, o, y, xx) = s;
                }
    return out;
}

Tensor grid(std::int64_t h, std::int64_t w, std::vector<double> v) { return Tensor(Shape{1, 1, h, w}, std::move(v)); }

}  // namespace

TEST_CASE("conv2d: identity 1x1 and bias-only 3x3") {
    const Tensor x = random_tensor(Shape{1, 1, 5, 3}, 11);
    Graph g;
    CHECK(to_vec(conv2d(g, x, Tensor(Shape{1, 1, 1, 1}, 1.0), Tensor(Shape{1, 1, 1, 1}, 0.0))) == to_vec(x));
    const Tensor y = conv2d(g, random_tensor(Shape{1, 1, 4, 4}, 12), Tensor(Shape{1, 1, 3, 3}, 0.0),
                            Tensor(Shape{1, 1, 1, 1}, 0.5));
    CHECK(all_equal(y, 0.5));
}

TEST_CASE("conv2d: all-ones 3x3 kernel on 1..9") {
    Graph g;
    const Tensor y = conv2d(g, grid(3, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9}), Tensor(Shape{1, 1, 3, 3}, 1.0), Tensor());
    CHECK(to_vec(y) == std::vector<double>{12, 21, 16, 27, 45, 33, 24, 39, 28});
}

TEST_CASE("conv2d matches a direct nested-loop convolution") {
    for (int k : {1, 3}) {
        const Tensor x = random_tensor(Shape{1, 2, 5, 5}, 20 + k);
        const Tensor w = random_tensor(Shape{3, 2, k, k}, 30 + k);
        const Tensor b = random_tensor(Shape{1, 3, 1, 1}, 40 + k);
        Graph g;
        const Tensor y = conv2d(g, x, w, b);
        CHECK(y.shape() == Shape{1, 3, 5, 5});
        CHECK(max_abs_diff(y, naive_conv(x, w, b)) < 1e-12);
    }
    // batch > 1, non-square
    const Tensor x = random_tensor(Shape{2, 3, 4, 7}, 50);
    const Tensor w = random_tensor(Shape{2, 3, 3, 3}, 51);
    Graph g;
    CHECK(max_abs_diff(conv2d(g, x, w, Tensor()), naive_conv(x, w, Tensor())) < 1e-12);
}

TEST_CASE("conv2d rejects bad shapes") {
    Graph g;
    const Tensor x(Shape{1, 2, 4, 4});
    CHECK_THROWS_AS(conv2d(g, x, Tensor(Shape{1, 3, 3, 3}), Tensor()), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(g, x, Tensor(Shape{1, 2, 5, 5}), Tensor()), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(g, x, Tensor(Shape{1, 2, 2, 2}), Tensor()), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(g, x, Tensor(Shape{2, 2, 1, 1}), Tensor(Shape{1, 3, 1, 1})), std::invalid_argument);
}

TEST_CASE("upsample and maxpool examples") {
    Graph g;
    const Tensor up = upsample_nearest_x2(g, grid(2, 2, {1, 2, 3, 4}));
    const std::vector<double> blocks{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    CHECK(up.shape() == Shape{1, 1, 4, 4});
    CHECK(to_vec(up) == blocks);
    CHECK(to_vec(maxpool_2x2(g, grid(4, 4, blocks))) == std::vector<double>{1, 2, 3, 4});
    CHECK_THROWS_AS(maxpool_2x2(g, Tensor(Shape{1, 1, 3, 4})), std::invalid_argument);
}

TEST_CASE("constants survive upsample, maxpool and GAP") {
    const Tensor c(Shape{1, 3, 4, 4}, -2.25);
    Graph g;
    CHECK(all_equal(upsample_nearest_x2(g, c), -2.25));
    CHECK(all_equal(maxpool_2x2(g, c), -2.25));
    CHECK(all_equal(global_avg_pool(g, c), -2.25));
}

TEST_CASE("upsample and maxpool are shape inverses") {
    const Tensor x = random_tensor(Shape{2, 3, 4, 6}, 60);
    Graph g;
    CHECK(maxpool_2x2(g, upsample_nearest_x2(g, x)).shape() == x.shape());
    CHECK(upsample_nearest_x2(g, maxpool_2x2(g, x)).shape() == x.shape());
    CHECK(to_vec(maxpool_2x2(g, upsample_nearest_x2(g, x))) == to_vec(x));
}

TEST_CASE("simple gradients of upsample, GAP and concat") {
    Tensor x = random_tensor(Shape{1, 2, 3, 3}, 61).set_requires_grad();
    {
        Graph g;
        g.backward(sum(g, upsample_nearest_x2(g, x)));
        for (double v : x.grad()) CHECK(v == 4.0);
    }
    x.zero_grad();
    {
        Graph g;
        g.backward(sum(g, global_avg_pool(g, x)));
        for (double v : x.grad()) CHECK(v == doctest::Approx(1.0 / 9.0));
    }
    x.zero_grad();
    {
        Graph g;
        const Tensor cat = concat_channels(g, x, x);
        CHECK(cat.shape() == Shape{1, 4, 3, 3});
        g.backward(sum(g, cat));
        for (double v : x.grad()) CHECK(v == 2.0);
    }
}

TEST_CASE("maxpool sends ties to the first cell") {
    Tensor x = Tensor(Shape{1, 1, 2, 2}, 3.0).set_requires_grad();
    Graph g;
    g.backward(sum(g, maxpool_2x2(g, x)));
    CHECK(to_vec(Tensor(x.shape(), std::vector<double>(x.grad().begin(), x.grad().end()))) ==
          std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("GAP and add") {
    Graph g;
    CHECK(global_avg_pool(g, grid(2, 2, {1, 2, 3, 4})).item() == 2.5);
    const Tensor x = random_tensor(Shape{1, 2, 3, 3}, 62);
    CHECK(to_vec(add(g, x, Tensor(x.shape(), 0.0))) == to_vec(x));
    const Tensor parts[] = {Tensor(Shape{1, 1, 2, 2}, 1.0), Tensor(Shape{1, 1, 2, 2}, 2.0),
                            Tensor(Shape{1, 1, 2, 2}, 4.0)};
    CHECK(all_equal(add(g, parts), 7.0));
    const Tensor b = add(g, Tensor(Shape{1, 2, 2, 2}, 0.0), Tensor(Shape{1, 2, 1, 1}, std::vector<double>{1.5, -3.0}));
    CHECK(to_vec(b) == std::vector<double>{1.5, 1.5, 1.5, 1.5, -3, -3, -3, -3});
    CHECK_THROWS_AS(add(g, Tensor(Shape{1, 1, 2, 2}), Tensor(Shape{1, 1, 4, 4})), std::invalid_argument);
}

TEST_CASE("concat then unit 1x1 conv equals add") {
    const Tensor a = random_tensor(Shape{1, 1, 4, 4}, 63);
    const Tensor b = random_tensor(Shape{1, 1, 4, 4}, 64);
    Graph g;
    const Tensor via_conv = conv2d(g, concat_channels(g, a, b), Tensor(Shape{1, 2, 1, 1}, 1.0), Tensor());
    CHECK(max_abs_diff(via_conv, add(g, a, b)) < 1e-12);
    CHECK(concat_channels(g, Tensor(Shape{1, 2, 4, 4}), Tensor(Shape{1, 3, 4, 4})).shape() == Shape{1, 5, 4, 4});
    CHECK_THROWS_AS(concat_channels(g, Tensor(Shape{1, 2, 4, 4}), Tensor(Shape{1, 2, 2, 4})), std::invalid_argument);
}

TEST_CASE("linear ops commute with scaling") {
    const Tensor x = random_tensor(Shape{1, 2, 4, 4}, 65);
    const Tensor y = random_tensor(Shape{1, 2, 4, 4}, 66);
    const Tensor w = random_tensor(Shape{3, 2, 3, 3}, 67);
    for (double alpha : {0.5, 2.0, 7.0, -1.5}) {
        Graph g;
        const Tensor ax = scale(g, x, alpha);
        const Tensor ay = scale(g, y, alpha);
        CHECK(max_abs_diff(conv2d(g, ax, w, Tensor()), scale(g, conv2d(g, x, w, Tensor()), alpha)) < 1e-12);
        CHECK(max_abs_diff(add(g, ax, ay), scale(g, add(g, x, y), alpha)) < 1e-12);
        CHECK(max_abs_diff(concat_channels(g, ax, ay), scale(g, concat_channels(g, x, y), alpha)) < 1e-12);
        CHECK(max_abs_diff(upsample_nearest_x2(g, ax), scale(g, upsample_nearest_x2(g, x), alpha)) < 1e-12);
        CHECK(max_abs_diff(global_avg_pool(g, ax), scale(g, global_avg_pool(g, x), alpha)) < 1e-12);
        if (alpha > 0) {
            CHECK(max_abs_diff(maxpool_2x2(g, ax), scale(g, maxpool_2x2(g, x), alpha)) < 1e-12);
        }
    }
}

TEST_CASE("sigmoid, relu and BCE values") {
    Graph g;
    CHECK(sigmoid(g, Tensor(Shape{}, 0.0)).item() == 0.5);
    CHECK(to_vec(relu(g, grid(1, 3, {-1, 0, 2}))) == std::vector<double>{0, 0, 2});
    const Tensor half(Shape{1, 1, 2, 2}, 0.5);
    const Tensor zeros(Shape{1, 1, 2, 2}, 0.0);
    const Tensor ones(Shape{1, 1, 2, 2}, 1.0);
    CHECK(weighted_bce_sum(g, half, zeros, ones).item() == doctest::Approx(4.0 * std::log(2.0)));
    CHECK_THROWS_AS(weighted_bce_sum(g, half, Tensor(Shape{1, 1, 2, 2}, 1.5), ones), std::invalid_argument);
    CHECK(std::isfinite(weighted_bce_sum(g, zeros, ones, ones).item()));
}

TEST_CASE("maxpool gradient on a random 6x6 input agrees with central differences") {
    Tensor x = random_tensor(Shape{1, 1, 6, 6}, 70);
    const Tensor r = random_tensor(Shape{1, 1, 3, 3}, 71);
    const GradCheckReport rep =
        grad_check([&](Graph& g) { return weighted_sum(g, maxpool_2x2(g, x), r); }, {{"x", x}}, 1e-6);
    CHECK(rep.passed());
}

TEST_CASE("conv2d weight gradient agrees with central differences") {
    Tensor x = random_tensor(Shape{1, 3, 5, 6}, 72);
    Tensor w = random_tensor(Shape{2, 3, 3, 3}, 73);
    const GradCheckReport rep =
        grad_check([&](Graph& g) { return sum(g, conv2d(g, x, w, Tensor())); }, {{"w", w}, {"x", x}}, 1e-6);
    CHECK(rep.passed());
}

TEST_CASE("every op passes the finite-difference suite for seeds 0..2") {
    for (std::uint64_t seed : {0u, 1u, 2u}) {
        const GradCheckReport rep = grad_check_ops(seed, 1e-5);
        INFO(rep.to_text());
        CHECK(rep.passed());
        CHECK(rep.entries.size() >= 18);
    }
}

TEST_CASE("a corrupted backward rule is caught") {
    // doubles x on the way forward but claims a unit derivative
    auto bad_double = [](Graph& g, const Tensor& x) {
        std::vector<double> out(x.values().begin(), x.values().end());
        for (double& v : out) v *= 2.0;
        return g.emit("bad_double", {x}, x.shape(), std::move(out), [x](std::span<const double> go) {
            auto gx = x.grad_accumulator();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
        });
    };
    Tensor x = random_tensor(Shape{1, 1, 3, 3}, 74);
    const GradCheckReport rep =
        grad_check([&](Graph& g) { return sum_squares(g, bad_double(g, x)); }, {{"x", x}}, 1e-5);
    CHECK(!rep.passed());
}

TEST_CASE("grad_check rejects a non-scalar loss and passes a zero network") {
    Tensor x = random_tensor(Shape{1, 1, 2, 2}, 75);
    CHECK_THROWS_AS(grad_check([&](Graph& g) { return scale(g, x, 1.0); }, {{"x", x}}, 1e-5), std::invalid_argument);
    Tensor w(Shape{2, 1, 3, 3}, 0.0);
    Tensor b(Shape{1, 2, 1, 1}, 0.0);
    const GradCheckReport rep = grad_check(
        [&](Graph& g) { return sum_squares(g, conv2d(g, x, w, b)); }, {{"w", w}, {"b", b}}, 1e-5);
    CHECK(rep.passed());
    CHECK(rep.worst() == 0.0);
}

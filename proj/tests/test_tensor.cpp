// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "mfpn/ops.hpp"
#include "mfpn/tensor.hpp"
#include "support.hpp"

using namespace mfpn;
using mfpn::test::random_tensor;

TEST_CASE("shape and storage") {
    Tensor t(Shape{2, 3, 4, 5}, 1.5);
    CHECK(t.numel() == 120);
    CHECK(t.values().size() == 120);
    CHECK(t.shape().plane() == 20);
    CHECK(t.is_leaf());
    CHECK(!t.has_grad());
    t.at(1, 2, 3, 4) = 7.0;
    CHECK(t.values().back() == 7.0);
    CHECK_THROWS_AS(Tensor(Shape{1, 0, 2, 2}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor(Shape{1, 1, 2, 2}, std::vector<double>(3)), std::invalid_argument);
}

TEST_CASE("clone is independent and copies alias") {
    Tensor a(Shape{1, 1, 2, 2}, 1.0);
    Tensor alias = a;
    Tensor copy = a.clone();
    a.mutable_values()[0] = 5.0;
    CHECK(alias.values()[0] == 5.0);
    CHECK(copy.values()[0] == 1.0);
}

TEST_CASE("backward of sum gives ones") {
    Tensor x = random_tensor(Shape{1, 2, 3, 3}, 1).set_requires_grad();
    Graph g;
    g.backward(sum(g, x));
    for (double v : x.grad()) {
        CHECK(v == 1.0);
    }
}

TEST_CASE("two backward calls double leaf gradients") {
    Tensor x = random_tensor(Shape{1, 2, 4, 4}, 2).set_requires_grad();
    Tensor w = random_tensor(Shape{3, 2, 3, 3}, 3).set_requires_grad();
    Graph g;
    const Tensor loss = sum_squares(g, conv2d(g, x, w, Tensor()));
    g.backward(loss);
    const std::vector<double> once(w.grad().begin(), w.grad().end());
    g.backward(loss);
    for (std::size_t i = 0; i < once.size(); ++i) {
        CHECK(w.grad()[i] == 2.0 * once[i]);
    }
}

TEST_CASE("intermediate gradients reset between backward calls") {
    Tensor x = random_tensor(Shape{1, 1, 2, 2}, 4).set_requires_grad();
    Graph g;
    const Tensor mid = scale(g, x, 3.0);
    const Tensor loss = sum(g, mid);
    g.backward(loss);
    g.backward(loss);
    for (double v : mid.grad()) {
        CHECK(v == 1.0);
    }
    for (double v : x.grad()) {
        CHECK(v == 6.0);
    }
}

TEST_CASE("graph misuse is rejected") {
    Tensor x = random_tensor(Shape{1, 1, 2, 2}, 5).set_requires_grad();
    Graph g1;
    Graph g2;
    const Tensor a = scale(g1, x, 2.0);
    CHECK_THROWS_AS(scale(g2, a, 2.0), std::logic_error);
    CHECK_THROWS_AS(g2.backward(sum(g1, a)), std::logic_error);
    CHECK_THROWS_AS(g1.backward(a), std::invalid_argument);
    CHECK_THROWS_AS(g1.backward(Tensor(Shape{}, 1.0)), std::logic_error);
    // leaves feed any graph
    CHECK_NOTHROW(scale(g2, x, 2.0));
}

TEST_CASE("backward visits records in reverse order") {
    // a chain where a forward-order traversal would read a gradient before it is complete
    Tensor x = Tensor(Shape{1, 1, 1, 1}, 2.0).set_requires_grad();
    Graph g;
    const Tensor a = scale(g, x, 3.0);
    const Tensor b = add(g, a, a);
    const Tensor c = add(g, b, a);
    g.backward(sum(g, c));
    CHECK(x.grad()[0] == 9.0);
}

TEST_CASE("depends_on follows the tape") {
    Tensor x(Shape{1, 1, 2, 2}, 1.0);
    Tensor y(Shape{1, 1, 2, 2}, 2.0);
    Graph g;
    const Tensor a = scale(g, x, 2.0);
    const Tensor b = add(g, a, a);
    const Tensor c = scale(g, y, 1.0);
    CHECK(g.depends_on(b, x));
    CHECK(g.depends_on(b, a));
    CHECK(!g.depends_on(b, y));
    CHECK(g.depends_on(c, y));
    CHECK(!g.depends_on(c, x));
    CHECK(g.op_names() == std::vector<std::string>{"scale", "add", "scale"});
}

TEST_CASE("identical inputs give bit-identical outputs") {
    const Tensor x = random_tensor(Shape{1, 3, 6, 6}, 6);
    const Tensor w = random_tensor(Shape{4, 3, 3, 3}, 7);
    const Tensor b = random_tensor(Shape{1, 4, 1, 1}, 8);
    Graph g1;
    Graph g2;
    const Tensor o1 = maxpool_2x2(g1, relu(g1, conv2d(g1, x, w, b)));
    const Tensor o2 = maxpool_2x2(g2, relu(g2, conv2d(g2, x, w, b)));
    CHECK(mfpn::test::to_vec(o1) == mfpn::test::to_vec(o2));
}

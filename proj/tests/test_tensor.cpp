// Copyright 2026 The lidkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "gradcheck.hpp"
#include "lid/tensor.hpp"

using lid::Graph;
using lid::Tensor;

TEST_CASE("tensor construction and shape checks") {
  auto t = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.ndim() == 2);
  CHECK_THROWS_AS(Tensor<double>::from({2, 2}, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor<double>::zeros({2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(t.item(), std::invalid_argument);
  CHECK(Tensor<double>::scalar(4.0).item() == 4.0);
}

TEST_CASE("forward semantics of the primitives") {
  Graph<double> g;

  SECTION("relu") {
    auto x = Tensor<double>::from({3}, {-1, 0, 2});
    auto y = g.relu(x);
    CHECK(y.value() == std::vector<double>{0, 0, 2});
  }

  SECTION("matmul identity") {
    auto eye = Tensor<double>::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto a = Tensor<double>::from({3, 2}, {1, 2, 3, 4, 5, 6});
    auto y = g.matmul(eye, a);
    CHECK(y.value() == a.value());
  }

  SECTION("matmul shape mismatch") {
    auto a = Tensor<double>::zeros({2, 3});
    auto b = Tensor<double>::zeros({2, 3});
    CHECK_THROWS_AS(g.matmul(a, b), std::invalid_argument);
  }

  SECTION("elementwise shape mismatch") {
    auto a = Tensor<double>::zeros({2, 3});
    auto b = Tensor<double>::zeros({3, 2});
    CHECK_THROWS_AS(g.add(a, b), std::invalid_argument);
    CHECK_THROWS_AS(g.mul(a, b), std::invalid_argument);
  }

  SECTION("concat and slice round-trip on axis 1") {
    auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
    auto b = Tensor<double>::from({2, 1}, {9, 8});
    auto cat = g.concat({a, b}, 1);
    REQUIRE(cat.shape() == std::vector<int>{2, 3});
    CHECK(cat.value() == std::vector<double>{1, 2, 9, 3, 4, 8});
    auto back = g.slice(cat, 1, 0, 2);
    CHECK(back.value() == a.value());
    auto tail = g.slice(cat, 1, 2, 1);
    CHECK(tail.value() == b.value());
  }

  SECTION("reductions and transpose") {
    auto a = Tensor<double>::from({2, 2}, {1, -3, 2, 7});
    CHECK(g.reduce_sum(a).item() == 7.0);
    CHECK(g.reduce_max(a).item() == 7.0);
    auto t = g.transpose(a);
    CHECK(t.value() == std::vector<double>{1, 2, -3, 7});
  }

  SECTION("non-finite results are reported") {
    auto a = Tensor<double>::from({1}, {-1.0});
    CHECK_THROWS_AS(g.log(a), lid::NumericError);
    auto big = Tensor<double>::from({1}, {1e308});
    CHECK_THROWS_AS(g.mul(big, big), lid::NumericError);
  }
}

TEST_CASE("backward basics") {
  SECTION("loss = sum(x) gives all-ones gradient") {
    auto x = Tensor<double>::from({4}, {1, 2, 3, 4}, /*requires_grad=*/true);
    Graph<double> g;
    g.backward(g.reduce_sum(x));
    CHECK(x.grad() == std::vector<double>{1, 1, 1, 1});
  }

  SECTION("loss = sum(x*x) gives 2x") {
    auto x = Tensor<double>::from({3}, {1.5, -2.0, 0.25}, true);
    Graph<double> g;
    g.backward(g.reduce_sum(g.mul(x, x)));
    CHECK(x.grad()[0] == Catch::Approx(3.0));
    CHECK(x.grad()[1] == Catch::Approx(-4.0));
    CHECK(x.grad()[2] == Catch::Approx(0.5));
  }

  SECTION("gradients accumulate across fan-out") {
    auto x = Tensor<double>::from({2}, {3.0, 4.0}, true);
    Graph<double> g;
    auto y = g.add(x, x);  // y = 2x
    g.backward(g.reduce_sum(y));
    CHECK(x.grad() == std::vector<double>{2, 2});
  }

  SECTION("backward requires a scalar that wants grad") {
    auto x = Tensor<double>::from({2}, {1, 2}, true);
    Graph<double> g;
    auto y = g.mul(x, x);
    CHECK_THROWS_AS(g.backward(y), std::invalid_argument);  // not scalar
    auto c = Tensor<double>::scalar(1.0);                    // no grad
    CHECK_THROWS_AS(g.backward(c), std::invalid_argument);
  }

  SECTION("a graph cannot be consumed twice") {
    auto x = Tensor<double>::from({2}, {1, 2}, true);
    Graph<double> g;
    auto loss = g.reduce_sum(x);
    g.backward(loss);
    CHECK_THROWS_AS(g.backward(loss), std::logic_error);
  }

  SECTION("parameters off the loss path get exactly zero grad") {
    auto x = Tensor<double>::from({2}, {1, 2}, true);
    auto unused = Tensor<double>::from({2}, {5, 6}, true);
    Graph<double> g;
    g.backward(g.reduce_sum(x));
    CHECK(unused.grad() == std::vector<double>{0, 0});
  }

  SECTION("no nodes are recorded without requires_grad") {
    auto x = Tensor<double>::from({2}, {1, 2});
    Graph<double> g;
    auto y = g.mul(x, x);
    CHECK(g.node_count() == 0);
    CHECK(!y.requires_grad());
  }
}

TEST_CASE("every primitive matches central finite differences") {
  std::mt19937 rng(42);
  const double tol = 1e-6;

  auto rnd = [&](std::vector<int> shape) {
    auto t = Tensor<double>::zeros(std::move(shape), true);
    gradcheck::fill_random(t, rng);
    return t;
  };

  SECTION("unary elementwise ops") {
    auto x = rnd({8});
    // keep log/reciprocal inputs away from zero
    for (auto& v : x.value()) v = 0.5 + std::abs(v);

    struct Case {
      const char* name;
      std::function<Tensor<double>(Graph<double>&, const Tensor<double>&)> op;
    };
    const Case cases[] = {
        {"tanh", [](Graph<double>& g, const Tensor<double>& t) { return g.tanh(t); }},
        {"sigmoid", [](Graph<double>& g, const Tensor<double>& t) { return g.sigmoid(t); }},
        {"relu", [](Graph<double>& g, const Tensor<double>& t) { return g.relu(t); }},
        {"exp", [](Graph<double>& g, const Tensor<double>& t) { return g.exp(t); }},
        {"log", [](Graph<double>& g, const Tensor<double>& t) { return g.log(t); }},
        {"scale", [](Graph<double>& g, const Tensor<double>& t) { return g.scale(t, -1.7); }},
        {"add_scalar", [](Graph<double>& g, const Tensor<double>& t) { return g.add_scalar(t, 0.3); }},
        {"reciprocal", [](Graph<double>& g, const Tensor<double>& t) { return g.reciprocal(t); }},
    };
    for (const auto& c : cases) {
      INFO(c.name);
      // weight the output so the grad is not uniform
      auto w = Tensor<double>::zeros({8});
      gradcheck::fill_random(w, rng);
      const double err = gradcheck::max_rel_error(
          {x}, [&](Graph<double>& g) { return g.reduce_sum(g.mul(c.op(g, x), w)); });
      CHECK(err < tol);
    }
  }

  SECTION("binary ops") {
    auto a = rnd({3, 4});
    auto b = rnd({3, 4});
    auto w = Tensor<double>::zeros({3, 4});
    gradcheck::fill_random(w, rng);
    for (auto op : {+0, +1}) {
      const double err = gradcheck::max_rel_error({a, b}, [&](Graph<double>& g) {
        auto y = op == 0 ? g.add(a, b) : g.mul(a, b);
        return g.reduce_sum(g.mul(y, w));
      });
      CHECK(err < tol);
    }
  }

  SECTION("matmul") {
    auto a = rnd({3, 5});
    auto b = rnd({5, 2});
    auto w = Tensor<double>::zeros({3, 2});
    gradcheck::fill_random(w, rng);
    const double err = gradcheck::max_rel_error({a, b}, [&](Graph<double>& g) {
      return g.reduce_sum(g.mul(g.matmul(a, b), w));
    });
    CHECK(err < tol);
  }

  SECTION("structural ops") {
    auto a = rnd({2, 3});
    auto b = rnd({2, 2});
    auto w = Tensor<double>::zeros({2, 5});
    gradcheck::fill_random(w, rng);
    const double cat_err = gradcheck::max_rel_error({a, b}, [&](Graph<double>& g) {
      return g.reduce_sum(g.mul(g.concat({a, b}, 1), w));
    });
    CHECK(cat_err < tol);

    auto w2 = Tensor<double>::zeros({2, 2});
    gradcheck::fill_random(w2, rng);
    const double slice_err = gradcheck::max_rel_error({a}, [&](Graph<double>& g) {
      return g.reduce_sum(g.mul(g.slice(a, 1, 1, 2), w2));
    });
    CHECK(slice_err < tol);

    auto w3 = Tensor<double>::zeros({3, 2});
    gradcheck::fill_random(w3, rng);
    const double tr_err = gradcheck::max_rel_error({a}, [&](Graph<double>& g) {
      return g.reduce_sum(g.mul(g.transpose(a), w3));
    });
    CHECK(tr_err < tol);

    const double rs_err = gradcheck::max_rel_error({a}, [&](Graph<double>& g) {
      auto r = g.reshape(a, {3, 2});
      return g.reduce_sum(g.mul(r, w3));
    });
    CHECK(rs_err < tol);
  }

  SECTION("reduce_max at a non-tied point") {
    auto a = rnd({7});
    a.value()[3] = 5.0;  // clear, isolated max
    const double err = gradcheck::max_rel_error(
        {a}, [&](Graph<double>& g) { return g.reduce_max(a); });
    CHECK(err < tol);
  }

  SECTION("add_rowvec") {
    auto m = rnd({4, 3});
    auto v = rnd({3});
    auto w = Tensor<double>::zeros({4, 3});
    gradcheck::fill_random(w, rng);
    const double err = gradcheck::max_rel_error({m, v}, [&](Graph<double>& g) {
      return g.reduce_sum(g.mul(g.add_rowvec(m, v), w));
    });
    CHECK(err < tol);
  }
}

TEST_CASE("composite expression matches finite differences") {
  std::mt19937 rng(7);
  auto x = Tensor<double>::zeros({4, 6}, true);
  auto w1 = Tensor<double>::zeros({6, 5}, true);
  auto b1 = Tensor<double>::zeros({5}, true);
  auto w2 = Tensor<double>::zeros({5, 1}, true);
  for (auto* t : {&x, &w1, &b1, &w2}) gradcheck::fill_random(*t, rng, -0.8, 0.8);

  const double err = gradcheck::max_rel_error({x, w1, b1, w2}, [&](Graph<double>& g) {
    auto h = g.tanh(g.add_rowvec(g.matmul(x, w1), b1));
    return g.reduce_sum(g.matmul(h, w2));
  });
  CHECK(err < 1e-6);
}

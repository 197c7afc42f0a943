// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fedconv/errors.hpp"
#include "fedconv/ops.hpp"
#include "gradcheck.hpp"

using namespace fedconv;
using fedconv::testing::gradcheck;

namespace {

Tensor iota(Shape shape) {
  Tensor t(std::move(shape));
  std::iota(t.data().begin(), t.data().end(), 0.0);
  return t;
}

}  // namespace

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor({2, 0}), ConfigError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), ConfigError);
  Tensor t = iota({2, 3});
  CHECK(t.at({1, 2}) == 5.0);
  CHECK(t.reshaped({3, 2}).at({2, 1}) == 5.0);
  CHECK_THROWS_AS(t.reshaped({4, 2}), ConfigError);
}

TEST_CASE("conv2d forward") {
  Graph g;
  SUBCASE("all ones 3x3 sums to 9") {
    auto y = conv2d(g.constant(Tensor({1, 1, 3, 3}, 1.0)), g.constant(Tensor({1, 1, 3, 3}, 1.0)));
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.value()[0] == 9.0);
  }
  SUBCASE("shape law on a reshaped weight slice") {
    auto y = conv2d(g.constant(Tensor({1, 1, 32, 16}, 0.5)), g.constant(Tensor({1, 1, 9, 5}, 1.0)));
    CHECK(y.shape() == Shape{1, 1, 24, 12});
  }
  SUBCASE("stride 2 with corner kernel picks every other element") {
    Tensor k({1, 1, 2, 2}, std::vector<double>{1, 0, 0, 0});
    auto y = conv2d(g.constant(iota({1, 1, 4, 4})), g.constant(k), 2, 0);
    CHECK(y.value().values() == std::vector<double>{0, 2, 8, 10});
  }
  SUBCASE("padding") {
    auto y = conv2d(g.constant(Tensor({1, 1, 2, 2}, 1.0)), g.constant(Tensor({1, 1, 3, 3}, 1.0)), 1, 1);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y.value().values() == std::vector<double>{4, 4, 4, 4});
  }
  SUBCASE("channel mismatch") {
    CHECK_THROWS_AS(conv2d(g.constant(Tensor({1, 2, 4, 4})), g.constant(Tensor({1, 3, 2, 2}))), ConfigError);
  }
  SUBCASE("kernel larger than padded input") {
    CHECK_THROWS_AS(conv2d(g.constant(Tensor({1, 1, 2, 2})), g.constant(Tensor({1, 1, 3, 3}))), ConfigError);
  }
}

TEST_CASE("transposed_conv2d") {
  Graph g;
  SUBCASE("inverts the conv shape law") {
    auto y = transposed_conv2d(g.constant(Tensor({1, 1, 24, 12}, 1.0)), g.constant(Tensor({1, 1, 9, 5}, 1.0)));
    CHECK(y.shape() == Shape{1, 1, 32, 16});
  }
  SUBCASE("delta input reproduces the kernel") {
    Tensor k = iota({1, 1, 3, 3});
    auto y = transposed_conv2d(g.constant(Tensor({1, 1, 1, 1}, 1.0)), g.constant(k));
    CHECK(y.value().values() == k.values());
  }
  SUBCASE("non-positive output size") {
    CHECK_THROWS_AS(transposed_conv2d(g.constant(Tensor({1, 1, 1, 1})), g.constant(Tensor({1, 1, 1, 1})), 1, 1),
                    ConfigError);
  }
}

TEST_CASE("transposed_conv2d is the adjoint of conv2d") {
  std::mt19937_64 rng(7);
  struct Case {
    Shape a, k;
    std::size_t s, p;
  };
  const Case cases[] = {{{2, 3, 7, 6}, {4, 3, 3, 2}, 1, 0},
                        {{1, 2, 9, 9}, {3, 2, 3, 3}, 2, 1},
                        {{3, 1, 8, 5}, {2, 1, 2, 2}, 3, 0},
                        {{1, 1, 32, 16}, {1, 1, 9, 5}, 1, 0},
                        {{2, 1, 12, 7}, {1, 1, 4, 3}, 2, 2},
                        {{1, 1, 10, 64}, {1, 1, 3, 23}, 1, 3}};
  for (const auto& c : cases) {
    Graph g;
    Tensor a = Tensor::normal(c.a, 1.0, rng);
    Tensor k = Tensor::normal(c.k, 1.0, rng);
    auto ka = g.constant(k);
    auto conv = conv2d(g.constant(a), ka, c.s, c.p);
    Tensor b = Tensor::normal(conv.shape(), 1.0, rng);
    auto adj = transposed_conv2d(g.constant(b), ka, c.s, c.p);
    REQUIRE(adj.shape() == a.shape());
    const double lhs = inner(conv.value(), b);
    const double rhs = inner(a, adj.value());
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("single-channel path agrees with the multi-channel path") {
  std::mt19937_64 rng(3);
  for (auto [s, p] : {std::pair<std::size_t, std::size_t>{1, 0}, {2, 1}, {3, 2}}) {
    Graph g;
    Tensor x = Tensor::normal({2, 1, 9, 8}, 1.0, rng);
    Tensor k = Tensor::normal({1, 1, 3, 4}, 1.0, rng);
    // Same conv with a second, all-zero input channel forces the GEMM path.
    Tensor x2({2, 2, 9, 8}), k2({1, 2, 3, 4});
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 72; ++i) x2[n * 144 + i] = x[n * 72 + i];
    for (std::size_t i = 0; i < 12; ++i) k2[i] = k[i];
    auto a = conv2d(g.constant(x), g.constant(k), s, p).value();
    auto b = conv2d(g.constant(x2), g.constant(k2), s, p).value();
    CHECK(max_abs_diff(a, b) < 1e-12);

    Tensor y = Tensor::normal(a.shape(), 1.0, rng);
    Tensor ky2({2, 1, 3, 4});
    for (std::size_t i = 0; i < 12; ++i) ky2[i] = k[i];
    Tensor y2({2, 2, a.dim(2), a.dim(3)});
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < a.numel() / 2; ++i) y2[n * a.numel() + i] = y[n * a.numel() / 2 + i];
    auto t1 = transposed_conv2d(g.constant(y), g.constant(k), s, p).value();
    auto t2 = transposed_conv2d(g.constant(y2), g.constant(ky2), s, p).value();
    CHECK(max_abs_diff(t1, t2) < 1e-12);
  }
}

TEST_CASE("mlr") {
  Graph g;
  auto y = mlr(g.constant(Tensor({3}, std::vector<double>{0.0, 2.0, -4.0})), 0.85, 0.001);
  CHECK(y.value()[0] == 0.0);
  CHECK(y.value()[1] == doctest::Approx(1.70).epsilon(1e-14));
  CHECK(y.value()[2] == doctest::Approx(-0.004).epsilon(1e-14));

  // Subgradient at zero follows the positive branch.
  Graph h;
  auto x = h.leaf(Tensor({1}, 0.0), true);
  auto grads = h.backward(sum(mlr(x, 0.85, 0.001)));
  CHECK(grads.at(x)[0] == 0.85);
}

TEST_CASE("weight_norm") {
  Graph g;
  auto dir = g.constant(Tensor({1, 2}, std::vector<double>{3, 4}));
  CHECK(weight_norm(dir, g.constant(Tensor({1}, 1.0))).value().values() == std::vector<double>{0.6, 0.8});
  auto scaled = weight_norm(dir, g.constant(Tensor({1}, 10.0))).value();
  CHECK(scaled[0] == doctest::Approx(6.0));
  CHECK(scaled[1] == doctest::Approx(8.0));
  CHECK(weight_norm(dir, g.constant(Tensor({1}, 5.0))).value().values() == std::vector<double>{3, 4});
  CHECK_THROWS_AS(weight_norm(g.constant(Tensor({1, 2}, 0.0)), g.constant(Tensor({1}, 1.0))), NumericalError);
}

TEST_CASE("cross_entropy") {
  Graph g;
  std::vector<int> label0{0};
  CHECK(cross_entropy(g.constant(Tensor({1, 10}, 0.3)), label0).value()[0] ==
        doctest::Approx(std::log(10.0)).epsilon(1e-12));
  CHECK(cross_entropy(g.constant(Tensor({1, 2}, std::vector<double>{1000, 0})), label0).value()[0] ==
        doctest::Approx(0.0));
  std::vector<int> label2{2};
  const double expected = std::log(1.0 + std::exp(-1.0) + std::exp(-2.0));  // 0.40761
  CHECK(cross_entropy(g.constant(Tensor({1, 3}, std::vector<double>{1, 2, 3})), label2).value()[0] ==
        doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(0.40761).epsilon(1e-5));
  std::vector<int> bad{3};
  CHECK_THROWS_AS(cross_entropy(g.constant(Tensor({1, 3})), bad), InputError);
}

TEST_CASE("backward") {
  SUBCASE("sum gives all-ones") {
    Graph g;
    auto x = g.leaf(Tensor({2, 3, 4}, 0.7), true);
    auto grads = g.backward(sum(x));
    CHECK(grads.at(x) == Tensor({2, 3, 4}, 1.0));
  }
  SUBCASE("frozen leaves are absent") {
    Graph g;
    auto frozen = g.leaf(Tensor({1, 1, 3, 3}, 0.5), false);
    auto k = g.leaf(Tensor({1, 1, 2, 2}, 0.1), true);
    auto grads = g.backward(sum(conv2d(frozen, k)));
    CHECK(grads.contains(k));
    CHECK_FALSE(grads.contains(frozen));
    CHECK(grads.size() == 1);
  }
  SUBCASE("non-scalar loss") {
    Graph g;
    auto x = g.leaf(Tensor({2}), true);
    CHECK_THROWS_AS(g.backward(x), UsageError);
  }
  SUBCASE("shared subexpression accumulates") {
    Graph g;
    auto x = g.leaf(Tensor({3}, std::vector<double>{1, 2, 3}), true);
    auto grads = g.backward(dot(x, x));
    CHECK(grads.at(x).values() == std::vector<double>{2, 4, 6});
  }
}

TEST_CASE("finite-difference checks") {
  std::mt19937_64 rng(11);
  SUBCASE("<conv(x,K), conv(x,K)>") {
    auto fn = [](Graph&, const std::vector<Var>& in) {
      auto y = conv2d(in[0], in[1], 1, 0);
      return dot(y, y);
    };
    CHECK(gradcheck(fn, {Tensor::normal({2, 2, 5, 4}, 1.0, rng), Tensor::normal({3, 2, 2, 3}, 1.0, rng)}) < 1e-4);
  }
  SUBCASE("strided padded conv") {
    auto fn = [](Graph& g, const std::vector<Var>& in) {
      auto y = conv2d(in[0], in[1], 2, 1);
      return dot(y, g.constant(Tensor(y.shape(), 0.3)));
    };
    CHECK(gradcheck(fn, {Tensor::normal({1, 2, 6, 5}, 1.0, rng), Tensor::normal({2, 2, 3, 3}, 1.0, rng)}) < 1e-4);
  }
  SUBCASE("transposed conv") {
    auto fn = [](Graph&, const std::vector<Var>& in) {
      auto y = transposed_conv2d(in[0], in[1], 2, 1);
      return dot(y, y);
    };
    CHECK(gradcheck(fn, {Tensor::normal({2, 2, 3, 4}, 1.0, rng), Tensor::normal({2, 3, 3, 2}, 1.0, rng)}) < 1e-4);
  }
  SUBCASE("single-channel strided padded conv and transposed conv") {
    auto fn = [](Graph&, const std::vector<Var>& in) {
      auto y = transposed_conv2d(conv2d(in[0], in[1], 2, 2), in[2], 2, 1);
      return dot(y, y);
    };
    CHECK(gradcheck(fn, {Tensor::normal({2, 1, 9, 7}, 1.0, rng), Tensor::normal({1, 1, 3, 4}, 1.0, rng),
                         Tensor::normal({1, 1, 2, 3}, 1.0, rng)}) < 1e-4);
  }
  SUBCASE("weight_norm, mlr, bias and cross-entropy") {
    auto fn = [](Graph&, const std::vector<Var>& in) {
      auto w = weight_norm(in[0], in[1]);
      auto h = add_bias(linear(in[2], mlr(w, 0.85, 0.1)), in[3]);
      std::vector<int> labels{0, 2};
      return cross_entropy(relu(h), labels);
    };
    CHECK(gradcheck(fn, {Tensor::normal({3, 4}, 1.0, rng), Tensor::normal({3}, 1.0, rng),
                         Tensor::normal({2, 4}, 1.0, rng), Tensor::normal({3}, 1.0, rng)}) < 1e-4);
  }
  SUBCASE("slicing, stacking and scale_by") {
    auto fn = [](Graph&, const std::vector<Var>& in) {
      std::vector<Var> parts;
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b) parts.push_back(scale_by(kernel_slice(in[0], a, b), in[1]));
      auto back = stack_kernel_slices(parts, 2, 2);
      auto flat = reshape(back, {3, 8});
      return dot(flat, add(flat, scale(flat, 0.5)));
    };
    CHECK(gradcheck(fn, {Tensor::normal({3, 2, 2, 2}, 1.0, rng), Tensor::normal({1}, 1.0, rng)}) < 1e-4);
  }
}

TEST_CASE("sgd_step") {
  NamedTensors p{{"w", Tensor({1}, 1.0)}};
  NamedTensors g{{"w", Tensor({1}, 0.5)}};
  CHECK(sgd_step(p, g, 0.0) == p);
  CHECK(sgd_step(p, g, 0.001).at("w")[0] == doctest::Approx(0.9995).epsilon(1e-15));
  auto twice = sgd_step(sgd_step(p, g, 0.01), g, 0.01);
  CHECK(twice.at("w")[0] == doctest::Approx(sgd_step(p, g, 0.02).at("w")[0]).epsilon(1e-15));
  CHECK_THROWS_AS(sgd_step(p, NamedTensors{}, 0.1), UsageError);
}

TEST_CASE("determinism") {
  std::mt19937_64 r1(5), r2(5);
  Tensor a1 = Tensor::normal({2, 3, 6, 6}, 1.0, r1), k1 = Tensor::normal({4, 3, 3, 3}, 1.0, r1);
  Tensor a2 = Tensor::normal({2, 3, 6, 6}, 1.0, r2), k2 = Tensor::normal({4, 3, 3, 3}, 1.0, r2);
  Graph g1, g2;
  CHECK(conv2d(g1.constant(a1), g1.constant(k1)).value() == conv2d(g2.constant(a2), g2.constant(k2)).value());
}

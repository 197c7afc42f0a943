// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "fedconv/container.hpp"
#include "fedconv/errors.hpp"
#include "fedconv/model.hpp"
#include "fedconv/ops.hpp"

using namespace fedconv;

namespace {

ModelSpec toy_cnn() {
  return make_sequential({1, 8, 8}, 10,
                         {{"c1", LayerKind::conv2d, 1, 4, 3, 3},
                          {"c2", LayerKind::conv2d, 4, 8, 3, 3},
                          {"fc", LayerKind::dense, 0, 10}});
}

ParameterSet zeros_like(const ModelSpec& spec) {
  ParameterSet p = init_params(spec, 0);
  for (auto& l : p.layers) {
    l.weight = Tensor(l.weight.shape());
    if (l.bias) l.bias = Tensor(l.bias->shape());
  }
  return p;
}

}  // namespace

TEST_CASE("spec shape propagation") {
  auto spec = toy_cnn();
  CHECK(spec.layers[2].in_channels == 8 * 4 * 4);
  CHECK(spec.layers[2].activation == Activation::none);
  CHECK(spec.output_shapes().back() == Shape{10});
  CHECK_THROWS_AS(make_sequential({1, 8, 8}, 5, {{"c", LayerKind::conv2d, 1, 2, 3, 3}, {"d", LayerKind::dense, 0, 4}}),
                  ConfigError);
  CHECK_THROWS_AS(make_sequential({1, 8, 8}, 2, {{"c", LayerKind::conv2d, 3, 2, 3, 3}, {"d", LayerKind::dense, 0, 2}}),
                  ConfigError);
}

TEST_CASE("forward") {
  SUBCASE("zero parameters give zero logits") {
    auto spec = toy_cnn();
    std::mt19937_64 rng(1);
    auto logits = forward(spec, zeros_like(spec), Tensor::normal({3, 1, 8, 8}, 1.0, rng));
    CHECK(logits == Tensor({3, 10}));
  }
  SUBCASE("identity dense layer returns the flattened input") {
    auto spec = make_sequential({2, 2, 1}, 4, {{"fc", LayerKind::dense, 0, 4, 1, 1, 1, Activation::none, false}});
    ParameterSet p = init_params(spec, 0);
    p.layers[0].weight = Tensor({4, 4});
    for (std::size_t i = 0; i < 4; ++i) p.layers[0].weight.at({i, i}) = 1.0;
    Tensor x({1, 2, 2, 1}, std::vector<double>{1, -2, 3, 4});
    CHECK(forward(spec, p, x).values() == x.values());
  }
  SUBCASE("toy CNN logits shape") {
    auto spec = toy_cnn();
    CHECK(forward(spec, init_params(spec, 3), Tensor({1, 1, 8, 8}, 0.5)).shape() == Shape{1, 10});
  }
  SUBCASE("batch shape mismatch") {
    auto spec = toy_cnn();
    CHECK_THROWS_AS(forward(spec, init_params(spec, 3), Tensor({1, 1, 9, 8})), InputError);
  }
  SUBCASE("forward does not mutate parameters") {
    auto spec = toy_cnn();
    auto p = init_params(spec, 4);
    auto copy = p;
    (void)forward(spec, p, Tensor({2, 1, 8, 8}, 1.0));
    CHECK(p == copy);
  }
}

TEST_CASE("local_train") {
  Dataset data = gen_synthetic(3, 10, {1, 8, 8}, 4.0, 9);
  auto spec = make_sequential({1, 8, 8}, 3, {{"c1", LayerKind::conv2d, 1, 2, 3, 3}, {"fc", LayerKind::dense, 0, 3}});
  auto p0 = init_params(spec, 5);

  CHECK(local_train(spec, p0, data, {.epochs = 0, .lr = 0.1, .batch_size = 32, .seed = 1}) == p0);
  CHECK(local_train(spec, p0, data, {.epochs = 2, .lr = 0.0, .batch_size = 32, .seed = 1}) == p0);
  CHECK_THROWS_AS(local_train(spec, p0, Dataset{}, {}), UsageError);

  SUBCASE("one sample, one epoch equals a manual sgd_step") {
    std::vector<std::size_t> first{0};
    Dataset one = data.subset(first);
    auto trained = local_train(spec, p0, one, {.epochs = 1, .lr = 0.05, .batch_size = 32, .seed = 2});

    Graph g;
    NamedTensors named = p0.to_named();
    NamedTensors leaves_grad;
    std::vector<LayerVars> vars(p0.size());
    std::map<std::string, Var> by_name;
    for (std::size_t i = 0; i < p0.size(); ++i) {
      vars[i].weight = by_name[p0.names[i] + ".weight"] = g.leaf(p0.layers[i].weight, true);
      vars[i].bias = by_name[p0.names[i] + ".bias"] = g.leaf(*p0.layers[i].bias, true);
    }
    auto grads = g.backward(cross_entropy(forward(spec, vars, g.constant(one.samples)), one.labels));
    for (auto& [name, v] : by_name) leaves_grad.emplace(name, grads.at(v));
    auto manual = ParameterSet::from_named(spec, sgd_step(named, leaves_grad, 0.05));
    for (std::size_t i = 0; i < p0.size(); ++i) {
      CHECK(max_abs_diff(manual.layers[i].weight, trained.layers[i].weight) <= 1e-15);
      CHECK(max_abs_diff(*manual.layers[i].bias, *trained.layers[i].bias) <= 1e-15);
    }
  }

  SUBCASE("loss decreases on a separable toy set at lr 0.001") {
    const double before = evaluate(spec, p0, data).loss;
    auto trained = local_train(spec, p0, data, {.epochs = 5, .lr = 0.001, .batch_size = 32, .seed = 3});
    CHECK(evaluate(spec, trained, data).loss < before);
  }

  SUBCASE("deterministic given seed") {
    TrainOptions o{.epochs = 2, .lr = 0.05, .batch_size = 4, .seed = 8};
    CHECK(local_train(spec, p0, data, o) == local_train(spec, p0, data, o));
  }
}

TEST_CASE("evaluate") {
  auto spec = make_sequential({2}, 10, {{"fc", LayerKind::dense, 0, 10, 1, 1, 1, Activation::none, true}});
  SUBCASE("constant class 0 predictor on a balanced set") {
    auto p = zeros_like(spec);
    Dataset data = gen_synthetic(10, 5, {2}, 1.0, 1);
    auto r = evaluate(spec, p, data);
    CHECK(r.accuracy == doctest::Approx(0.10));
    CHECK(r.loss == doctest::Approx(std::log(10.0)));
    CHECK(evaluate(spec, p, data).accuracy == r.accuracy);
  }
  SUBCASE("single correct sample") {
    auto p = zeros_like(spec);
    (*p.layers[0].bias)[7] = 1.0;
    Dataset d{Tensor({1, 2}), {7}, 10};
    CHECK(evaluate(spec, p, d).accuracy == 1.0);
  }
  SUBCASE("three samples with hand-set logits") {
    // Identity on the first two classes: logits are (x0, x1, 0, ...).
    auto p = zeros_like(spec);
    p.layers[0].weight.at({0, 0}) = 1.0;
    p.layers[0].weight.at({1, 1}) = 1.0;
    Dataset d{Tensor({3, 2}, std::vector<double>{2, 1, 1, 3, 5, 4}), {0, 1, 1}, 10};
    CHECK(evaluate(spec, p, d).accuracy == doctest::Approx(2.0 / 3.0));
  }
  SUBCASE("empty dataset") {
    CHECK_THROWS_AS(evaluate(spec, zeros_like(spec), Dataset{}), UsageError);
  }
}

TEST_CASE("parameter container") {
  auto spec = toy_cnn();
  auto p = init_params(spec, 12);
  const std::string bytes = encode_container(kParamsMagic, p.to_named());
  CHECK(bytes.substr(0, 4) == "FCPS");
  CHECK(ParameterSet::from_named(spec, decode_container(kParamsMagic, bytes)) == p);
  CHECK_THROWS_AS(decode_container(kConvParamsMagic, bytes), FormatError);
  CHECK_THROWS_AS(decode_container(kParamsMagic, bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(decode_container(kParamsMagic, bytes + "x"), FormatError);

  const auto path = std::filesystem::temp_directory_path() / "fedconv_params_test.fcps";
  save_params(path, p);
  CHECK(load_params(path, spec) == p);
  std::filesystem::remove(path);

  auto q = p;
  q.layers[0].weight[0] += 1e-12;
  CHECK(fingerprint(p.to_named()) == fingerprint(init_params(spec, 12).to_named()));
  CHECK(fingerprint(p.to_named()) != fingerprint(q.to_named()));
}

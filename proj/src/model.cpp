// SPDX-License-Identifier: Apache-2.0
#include "fedconv/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fedconv/errors.hpp"
#include "fedconv/ops.hpp"

namespace fedconv {

Shape LayerSpec::weight_shape() const {
  if (kind == LayerKind::conv2d) return {out_channels, in_channels, k1, k2};
  return {out_channels, in_channels};
}

Shape ModelSpec::layer_input_shape(std::size_t i) const {
  if (i == 0) return input_shape;
  return output_shapes().at(i - 1);
}

std::vector<Shape> ModelSpec::output_shapes() const {
  std::vector<Shape> out;
  Shape cur = input_shape;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::conv2d) {
      if (cur.size() != 3) throw ConfigError("layer " + l.name + ": conv2d needs a [C, H, W] input, got " + shape_str(cur));
      if (cur[0] != l.in_channels) {
        throw ConfigError("layer " + l.name + ": expects " + std::to_string(l.in_channels) + " input channels, got " +
                          std::to_string(cur[0]));
      }
      cur = {l.out_channels, conv_out_dim(cur[1], l.k1, l.stride, 0), conv_out_dim(cur[2], l.k2, l.stride, 0)};
    } else {
      const std::size_t features = shape_numel(cur);
      if (features != l.in_channels) {
        throw ConfigError("layer " + l.name + ": expects " + std::to_string(l.in_channels) + " input features, got " +
                          std::to_string(features));
      }
      cur = {l.out_channels};
    }
    out.push_back(cur);
  }
  return out;
}

void ModelSpec::validate() const {
  if (layers.empty()) throw ConfigError("model has no layers");
  if (input_shape.empty() || shape_numel(input_shape) == 0) throw ConfigError("model input shape is empty");
  if (input_shape.size() != 1 && input_shape.size() != 3) throw ConfigError("model input must be [C, H, W] or [D]");
  std::set<std::string> names;
  for (const auto& l : layers) {
    if (l.name.empty()) throw ConfigError("layer without a name");
    if (!names.insert(l.name).second) throw ConfigError("duplicate layer name " + l.name);
    if (l.in_channels == 0 || l.out_channels == 0) throw ConfigError("layer " + l.name + ": channel counts must be >= 1");
    if (l.k1 == 0 || l.k2 == 0 || l.stride == 0) throw ConfigError("layer " + l.name + ": kernel and stride must be >= 1");
    if (l.kind == LayerKind::dense && (l.k1 != 1 || l.k2 != 1)) throw ConfigError("layer " + l.name + ": dense kernel must be 1x1");
  }
  (void)output_shapes();
  if (layers.back().out_channels != num_classes) {
    throw ConfigError("last layer has " + std::to_string(layers.back().out_channels) + " outputs but the model has " +
                      std::to_string(num_classes) + " classes");
  }
}

std::size_t ModelSpec::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += shape_numel(l.weight_shape()) + (l.has_bias ? l.out_channels : 0);
  return n;
}

ModelSpec make_sequential(Shape input_shape, std::size_t num_classes, std::vector<LayerSpec> layers) {
  ModelSpec spec;
  spec.input_shape = std::move(input_shape);
  spec.num_classes = num_classes;
  Shape cur = spec.input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    if (l.name.empty()) l.name = "layer" + std::to_string(i);
    if (l.kind == LayerKind::dense && l.in_channels == 0) l.in_channels = shape_numel(cur);
    if (l.kind == LayerKind::conv2d && l.in_channels == 0 && cur.size() == 3) l.in_channels = cur[0];
    if (i + 1 == layers.size()) l.activation = Activation::none;
    if (l.kind == LayerKind::conv2d) {
      if (cur.size() != 3) throw ConfigError("layer " + l.name + ": conv2d after a flattened layer");
      cur = {l.out_channels, conv_out_dim(cur[1], l.k1, l.stride, 0), conv_out_dim(cur[2], l.k2, l.stride, 0)};
    } else {
      cur = {l.out_channels};
    }
  }
  spec.layers = std::move(layers);
  spec.validate();
  return spec;
}

const LayerParams& ParameterSet::at(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return layers[i];
  throw UsageError("no layer named " + name);
}

std::size_t ParameterSet::numel() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.numel() + (l.bias ? l.bias->numel() : 0);
  return n;
}

NamedTensors ParameterSet::to_named() const {
  NamedTensors out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.emplace(names[i] + ".weight", layers[i].weight);
    if (layers[i].bias) out.emplace(names[i] + ".bias", *layers[i].bias);
  }
  return out;
}

ParameterSet ParameterSet::from_named(const ModelSpec& spec, const NamedTensors& named) {
  ParameterSet p;
  std::size_t used = 0;
  for (const auto& l : spec.layers) {
    auto w = named.find(l.name + ".weight");
    if (w == named.end()) throw ConfigError("missing parameter " + l.name + ".weight");
    LayerParams lp{w->second, std::nullopt};
    ++used;
    if (l.has_bias) {
      auto b = named.find(l.name + ".bias");
      if (b == named.end()) throw ConfigError("missing parameter " + l.name + ".bias");
      lp.bias = b->second;
      ++used;
    }
    p.names.push_back(l.name);
    p.layers.push_back(std::move(lp));
  }
  if (used != named.size()) throw ConfigError("parameter container has entries not in the model spec");
  p.validate(spec);
  return p;
}

void ParameterSet::validate(const ModelSpec& spec) const {
  if (names.size() != spec.layers.size() || layers.size() != spec.layers.size()) {
    throw ConfigError("parameter set has " + std::to_string(layers.size()) + " layers, spec has " +
                      std::to_string(spec.layers.size()));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (names[i] != l.name) throw ConfigError("layer " + std::to_string(i) + " is " + names[i] + ", spec says " + l.name);
    if (layers[i].weight.shape() != l.weight_shape()) {
      throw ConfigError("layer " + l.name + ": weight " + shape_str(layers[i].weight.shape()) + ", spec expects " +
                        shape_str(l.weight_shape()));
    }
    if (l.has_bias != layers[i].bias.has_value()) throw ConfigError("layer " + l.name + ": bias presence mismatch");
    if (l.has_bias && layers[i].bias->shape() != l.bias_shape()) {
      throw ConfigError("layer " + l.name + ": bias " + shape_str(layers[i].bias->shape()) + ", spec expects " +
                        shape_str(l.bias_shape()));
    }
  }
}

ParameterSet init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  ParameterSet p;
  for (const auto& l : spec.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_channels * l.k1 * l.k2));
    LayerParams lp{Tensor::uniform(l.weight_shape(), bound, rng), std::nullopt};
    if (l.has_bias) lp.bias = Tensor::uniform(l.bias_shape(), bound, rng);
    p.names.push_back(l.name);
    p.layers.push_back(std::move(lp));
  }
  return p;
}

std::vector<LayerVars> as_vars(Graph& graph, const ParameterSet& params, bool requires_grad) {
  std::vector<LayerVars> out;
  out.reserve(params.size());
  for (const auto& l : params.layers) {
    LayerVars v;
    v.weight = graph.leaf(l.weight, requires_grad);
    if (l.bias) v.bias = graph.leaf(*l.bias, requires_grad);
    out.push_back(v);
  }
  return out;
}

Var forward(const ModelSpec& spec, std::span<const LayerVars> layers, Var batch) {
  if (layers.size() != spec.layers.size()) throw ConfigError("forward: layer count mismatch");
  const Shape& bs = batch.shape();
  if (bs.size() != spec.input_shape.size() + 1 || !std::equal(spec.input_shape.begin(), spec.input_shape.end(), bs.begin() + 1)) {
    throw InputError("batch shape " + shape_str(bs) + " does not match model input " + shape_str(spec.input_shape));
  }
  const std::size_t n = bs[0];
  Var x = batch;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (l.kind == LayerKind::conv2d) {
      x = conv2d(x, layers[i].weight, l.stride, 0);
    } else {
      if (x.shape().size() != 2) x = reshape(x, {n, x.value().numel() / n});
      x = linear(x, layers[i].weight);
    }
    if (layers[i].bias.valid()) x = add_bias(x, layers[i].bias);
    if (l.activation == Activation::relu) x = relu(x);
  }
  return x;
}

Tensor forward(const ModelSpec& spec, const ParameterSet& params, const Tensor& batch) {
  params.validate(spec);
  Graph g;
  auto vars = as_vars(g, params, false);
  return forward(spec, vars, g.constant(batch)).value();
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::mt19937_64* shuffle) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) std::shuffle(order.begin(), order.end(), *shuffle);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    out.emplace_back(order.begin() + i, order.begin() + std::min(n, i + batch_size));
  }
  return out;
}

ParameterSet local_train(const ModelSpec& spec, const ParameterSet& params, const Dataset& data,
                         const TrainOptions& options) {
  if (data.empty()) throw UsageError("local_train: empty dataset");
  params.validate(spec);
  ParameterSet p = params;
  std::mt19937_64 rng(options.seed);
  for (std::size_t e = 0; e < options.epochs; ++e) {
    for (const auto& idx : make_batches(data.size(), options.batch_size, &rng)) {
      Graph g;
      auto vars = as_vars(g, p, true);
      const auto labels = data.batch_labels(idx);
      auto loss = cross_entropy(forward(spec, vars, g.constant(data.batch(idx))), labels);
      auto grads = g.backward(loss);
      for (std::size_t i = 0; i < p.size(); ++i) {
        auto step = [&](Tensor& t, Var v) {
          const Tensor& gr = grads.at(v);
          for (std::size_t k = 0; k < t.numel(); ++k) t[k] -= options.lr * gr[k];
        };
        step(p.layers[i].weight, vars[i].weight);
        if (p.layers[i].bias) step(*p.layers[i].bias, vars[i].bias);
      }
    }
  }
  return p;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw InputError("argmax_rows expects [N, K] logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits[i * k + j] > logits[i * k + best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

EvalResult evaluate(const ModelSpec& spec, const ParameterSet& params, const Dataset& data) {
  if (data.empty()) throw UsageError("evaluate: empty dataset");
  params.validate(spec);
  std::size_t correct = 0;
  double loss_sum = 0.0;
  for (const auto& idx : make_batches(data.size(), 256, nullptr)) {
    Graph g;
    auto vars = as_vars(g, params, false);
    const auto labels = data.batch_labels(idx);
    auto logits = forward(spec, vars, g.constant(data.batch(idx)));
    loss_sum += cross_entropy(logits, labels).value()[0] * static_cast<double>(idx.size());
    const auto pred = argmax_rows(logits.value());
    for (std::size_t i = 0; i < idx.size(); ++i) correct += pred[i] == labels[i];
  }
  const double n = static_cast<double>(data.size());
  return {static_cast<double>(correct) / n, loss_sum / n};
}

}  // namespace fedconv

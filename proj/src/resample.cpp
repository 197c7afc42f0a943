// SPDX-License-Identifier: Apache-2.0
#include "fedconv/resample.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fedconv/errors.hpp"
#include "fedconv/ops.hpp"

namespace fedconv {

namespace {

constexpr std::size_t kPreChannels = 16;

std::size_t resample_dim(Direction d, std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
  return d == Direction::compress ? conv_out_dim(in, k, s, p) : tconv_out_dim(in, k, s, p);
}

Var resample_op(Direction d, Var x, Var k, std::size_t s, std::size_t p) {
  return d == Direction::compress ? conv2d(x, k, s, p) : transposed_conv2d(x, k, s, p);
}

std::string key(const std::string& layer, const std::string& part) { return layer + "." + part; }
std::string slice_key(const std::string& layer, std::size_t i, const char* part) {
  return layer + ".k" + std::to_string(i) + "." + part;
}

Var lookup(const std::map<std::string, Var>& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw ConfigError("pipeline parameter " + name + " missing");
  return it->second;
}

// Expected keys and shapes for one plan.
NamedTensors param_layout(const ResamplePlan& plan) {
  NamedTensors out;
  const bool compress = plan.direction == Direction::compress;
  for (const auto& c : plan.layers) {
    out.emplace(key(c.layer_name, "pre1.weight"), Tensor(compress ? Shape{kPreChannels, 1, 1, 1} : Shape{1, kPreChannels, 1, 1}));
    out.emplace(key(c.layer_name, "pre1.bias"), Tensor({kPreChannels}));
    out.emplace(key(c.layer_name, "pre2.weight"), Tensor(compress ? Shape{1, kPreChannels, 1, 1} : Shape{kPreChannels, 1, 1, 1}));
    out.emplace(key(c.layer_name, "pre2.bias"), Tensor({1}));
    for (std::size_t i = 0; i < c.slice_count; ++i) {
      out.emplace(slice_key(c.layer_name, i, "direction"), Tensor({1, 1, c.k1, c.k2}));
      out.emplace(slice_key(c.layer_name, i, "magnitude"), Tensor({1}));
    }
    if (c.has_bias) {
      out.emplace(key(c.layer_name, "bias_k.direction"), Tensor({1, 1, c.bias_k1, c.bias_k2}));
      out.emplace(key(c.layer_name, "bias_k.magnitude"), Tensor({1}));
    }
  }
  return out;
}

void set_delta(Tensor& kernel, std::size_t padding) {
  kernel = Tensor(kernel.shape());
  const std::size_t a = std::min(padding, kernel.dim(2) - 1);
  const std::size_t b = std::min(padding, kernel.dim(3) - 1);
  kernel.at({0, 0, a, b}) = 1.0;
}

double l2(const Tensor& t) { return std::sqrt(inner(t, t)); }

}  // namespace

void ResamplePlan::validate() const {
  src_spec.validate();
  dst_spec.validate();
  if (layers.size() != src_spec.layers.size() || layers.size() != dst_spec.layers.size()) {
    throw ConfigError("plan layer count does not match its model specs");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& c = layers[i];
    const auto& sl = src_spec.layers[i];
    const auto& dl = dst_spec.layers[i];
    if (c.layer_name != sl.name || c.layer_name != dl.name) throw ConfigError("plan layer names out of order at " + c.layer_name);
    const Shape src_w = sl.weight_shape(), dst_w = dl.weight_shape();
    if (c.src_slice != Shape{src_w[0], src_w[1]} || c.dst_slice != Shape{dst_w[0], dst_w[1]}) {
      throw ConfigError("layer " + c.layer_name + ": plan slices disagree with the model specs");
    }
    if (c.slice_count != sl.k1 * sl.k2 || sl.k1 != dl.k1 || sl.k2 != dl.k2) {
      throw ConfigError("layer " + c.layer_name + ": slice count disagrees with the layer kernel");
    }
    for (int axis = 0; axis < 2; ++axis) {
      const std::size_t k = axis == 0 ? c.k1 : c.k2;
      if (resample_dim(direction, c.src_slice[axis], k, c.stride, c.padding) != c.dst_slice[axis]) {
        throw ConfigError("layer " + c.layer_name + ": kernel violates the shape law on axis " + std::to_string(axis));
      }
    }
    if (c.has_bias != sl.has_bias) throw ConfigError("layer " + c.layer_name + ": bias flag mismatch");
    if (c.has_bias && (resample_dim(direction, c.src_slice[0], c.bias_k1, c.stride, c.padding) != c.dst_slice[0] ||
                       resample_dim(direction, 1, c.bias_k2, c.stride, c.padding) != 1)) {
      throw ConfigError("layer " + c.layer_name + ": bias kernel violates the shape law");
    }
  }
}

ResampleParams init_resample_params(const ResamplePlan& plan, KernelInit init, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  NamedTensors p = param_layout(plan);
  // Fill in key order so the draw sequence is independent of construction.
  for (auto& [name, t] : p) {
    const bool is_pre1 = name.ends_with(".pre1.weight") || name.ends_with(".pre1.bias");
    if (is_pre1) t = Tensor::uniform(t.shape(), 1.0, rng);
    if (name.ends_with(".direction")) {
      if (init == KernelInit::delta) {
        set_delta(t, plan.policy.padding);
      } else {
        t = Tensor::uniform(t.shape(), 1.0 / std::sqrt(static_cast<double>(t.dim(2) * t.dim(3))), rng);
      }
    }
  }
  for (auto& [name, t] : p) {
    if (name.ends_with(".magnitude")) {
      const std::string dir = name.substr(0, name.size() - std::string("magnitude").size()) + "direction";
      t[0] = l2(p.at(dir));
    }
  }
  return p;
}

ResampleParams identity_resample_params(const ResamplePlan& plan) {
  NamedTensors p = param_layout(plan);
  for (auto& [name, t] : p) {
    if (name.ends_with(".direction")) set_delta(t, plan.policy.padding);
    if (name.ends_with(".magnitude")) t[0] = 1.0;
  }
  return p;
}

void check_resample_params(const ResamplePlan& plan, const ResampleParams& params) {
  const NamedTensors expected = param_layout(plan);
  if (expected.size() != params.size()) {
    throw ConfigError("pipeline parameters have " + std::to_string(params.size()) + " entries, plan needs " +
                      std::to_string(expected.size()));
  }
  for (const auto& [name, t] : expected) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("pipeline parameter " + name + " missing");
    if (it->second.shape() != t.shape()) {
      throw ConfigError("pipeline parameter " + name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                        shape_str(t.shape()));
    }
  }
}

std::vector<Tensor> reshape_for_compression(const Tensor& weight) {
  if (weight.rank() == 2) return {weight.reshaped({1, 1, weight.dim(0), weight.dim(1)})};
  if (weight.rank() != 4) throw ConfigError("cannot slice a rank-" + std::to_string(weight.rank()) + " weight");
  const std::size_t o = weight.dim(0), in = weight.dim(1), k1 = weight.dim(2), k2 = weight.dim(3);
  std::vector<Tensor> slices;
  slices.reserve(k1 * k2);
  for (std::size_t a = 0; a < k1; ++a) {
    for (std::size_t b = 0; b < k2; ++b) {
      Tensor s({1, 1, o, in});
      for (std::size_t r = 0; r < o; ++r)
        for (std::size_t c = 0; c < in; ++c) s[r * in + c] = weight[((r * in + c) * k1 + a) * k2 + b];
      slices.push_back(std::move(s));
    }
  }
  return slices;
}

Tensor restore_from_slices(const std::vector<Tensor>& slices, const Shape& weight_shape) {
  if (weight_shape.size() == 2) {
    if (slices.size() != 1) throw ConfigError("dense weight needs exactly one slice");
    return slices[0].reshaped(weight_shape);
  }
  if (weight_shape.size() != 4) throw ConfigError("cannot restore a rank-" + std::to_string(weight_shape.size()) + " weight");
  const std::size_t o = weight_shape[0], in = weight_shape[1], k1 = weight_shape[2], k2 = weight_shape[3];
  if (slices.size() != k1 * k2) throw ConfigError("slice count does not match the kernel size");
  Tensor w(weight_shape);
  for (std::size_t a = 0; a < k1; ++a) {
    for (std::size_t b = 0; b < k2; ++b) {
      const Tensor& s = slices[a * k2 + b];
      if (s.shape() != Shape{1, 1, o, in}) throw ConfigError("slice shape " + shape_str(s.shape()) + " does not fit");
      for (std::size_t r = 0; r < o; ++r)
        for (std::size_t c = 0; c < in; ++c) w[((r * in + c) * k1 + a) * k2 + b] = s[r * in + c];
    }
  }
  return w;
}

std::vector<LayerVars> resample_graph(Graph& graph, const ResamplePlan& plan, const std::map<std::string, Var>& vars,
                                      const ParameterSet& src, const PipelineOptions& options) {
  src.validate(plan.src_spec);
  const Direction dir = plan.direction;
  std::vector<LayerVars> out;
  out.reserve(plan.layers.size());
  for (std::size_t li = 0; li < plan.layers.size(); ++li) {
    const auto& c = plan.layers[li];
    const auto& name = c.layer_name;
    auto kernel = [&](const std::string& prefix) {
      Var d = lookup(vars, prefix + "direction");
      return options.weight_norm ? weight_norm(d, lookup(vars, prefix + "magnitude")) : d;
    };

    Var pre1_w, pre1_b, pre2_w, pre2_b;
    if (options.residual) {
      pre1_w = lookup(vars, key(name, "pre1.weight"));
      pre1_b = lookup(vars, key(name, "pre1.bias"));
      pre2_w = lookup(vars, key(name, "pre2.weight"));
      pre2_b = lookup(vars, key(name, "pre2.bias"));
    }

    const auto slices = reshape_for_compression(src.layers[li].weight);
    std::vector<Var> generated;
    generated.reserve(slices.size());
    for (std::size_t i = 0; i < slices.size(); ++i) {
      Var x = graph.constant(slices[i]);
      if (options.residual) {
        Var h = add_bias(resample_op(dir, x, pre1_w, 1, 0), pre1_b);
        h = add_bias(resample_op(dir, h, pre2_w, 1, 0), pre2_b);
        x = add(h, x);
      }
      Var z = resample_op(dir, x, kernel(name + ".k" + std::to_string(i) + "."), c.stride, c.padding);
      generated.push_back(options.mlr ? mlr(z, options.s_p, options.s_n) : z);
    }

    LayerVars lv;
    if (c.kind == LayerKind::conv2d) {
      lv.weight = stack_kernel_slices(generated, c.layer_k1, c.layer_k2);
    } else {
      lv.weight = reshape(generated[0], c.dst_slice);
    }
    if (c.has_bias) {
      const Tensor& b = *src.layers[li].bias;
      Var xb = graph.constant(b.reshaped({1, 1, b.numel(), 1}));
      Var zb = resample_op(dir, xb, kernel(name + ".bias_k."), c.stride, c.padding);
      lv.bias = reshape(zb, {c.dst_slice[0]});
    }
    out.push_back(lv);
  }
  return out;
}

ParameterSet apply_resample(const ResamplePlan& plan, const ResampleParams& params, const ParameterSet& src,
                            const PipelineOptions& options) {
  check_resample_params(plan, params);
  Graph g;
  std::map<std::string, Var> vars;
  for (const auto& [name, t] : params) vars.emplace(name, g.constant(t));
  const auto layers = resample_graph(g, plan, vars, src, options);
  ParameterSet out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.names.push_back(plan.dst_spec.layers[i].name);
    LayerParams lp{layers[i].weight.value(), std::nullopt};
    if (layers[i].bias.valid()) lp.bias = layers[i].bias.value();
    out.layers.push_back(std::move(lp));
  }
  out.validate(plan.dst_spec);
  return out;
}

double cosine_lr(std::size_t e, std::size_t t_max, double lr_min, double lr_max) {
  if (t_max == 0) throw ConfigError("T_max must be >= 1");
  if (lr_max < lr_min) throw ConfigError("lr_max must not be below lr_min");
  const std::size_t phase = e % (t_max + 1);
  return lr_min + 0.5 * (lr_max - lr_min) *
                      (1.0 + std::cos(static_cast<double>(phase) / static_cast<double>(t_max) * std::numbers::pi));
}

ResampleParams finetune_resample(const ResamplePlan& plan, const ParameterSet& src, ResampleParams params,
                                 const Dataset& data, const PipelineOptions& options, const FinetuneOptions& ft) {
  if (data.empty()) throw UsageError("fine-tuning needs server data");
  check_resample_params(plan, params);
  src.validate(plan.src_spec);
  std::mt19937_64 rng(ft.seed);
  NamedTensors m1, m2;
  if (ft.optimizer == Optimizer::adam) {
    for (const auto& [name, t] : params) {
      m1.emplace(name, Tensor(t.shape()));
      m2.emplace(name, Tensor(t.shape()));
    }
  }
  std::size_t step = 0;
  for (std::size_t e = 0; e < ft.epochs; ++e) {
    const auto& s = ft.schedule;
    const double lr = ft.use_schedule ? cosine_lr(e, s.t_max, s.lr_min, s.lr_max) : s.lr_max;
    for (const auto& idx : make_batches(data.size(), ft.batch_size, &rng)) {
      Graph g;
      std::map<std::string, Var> vars;
      for (const auto& [name, t] : params) vars.emplace(name, g.leaf(t, true));
      const auto layers = resample_graph(g, plan, vars, src, options);
      const auto labels = data.batch_labels(idx);
      auto loss = cross_entropy(forward(plan.dst_spec, layers, g.constant(data.batch(idx))), labels);
      const auto grads = g.backward(loss);
      ++step;
      for (auto& [name, t] : params) {
        const Var v = vars.at(name);
        if (!grads.contains(v)) continue;
        const Tensor& gr = grads.at(v);
        if (ft.optimizer == Optimizer::sgd) {
          for (std::size_t k = 0; k < t.numel(); ++k) t[k] -= lr * gr[k];
          continue;
        }
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        Tensor& m = m1.at(name);
        Tensor& u = m2.at(name);
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
        for (std::size_t k = 0; k < t.numel(); ++k) {
          m[k] = b1 * m[k] + (1.0 - b1) * gr[k];
          u[k] = b2 * u[k] + (1.0 - b2) * gr[k] * gr[k];
          t[k] -= lr * (m[k] / c1) / (std::sqrt(u[k] / c2) + eps);
        }
      }
    }
    if (ft.on_epoch) ft.on_epoch(e, lr, params);
  }
  return params;
}

}  // namespace fedconv

// SPDX-License-Identifier: Apache-2.0
#include "fedconv/compression.hpp"

#include <cmath>

#include "fedconv/errors.hpp"

namespace fedconv {

std::size_t scaled_channels(std::size_t channels, double sr) {
  const auto n = static_cast<std::size_t>(std::llround(sr * static_cast<double>(channels)));
  return std::max<std::size_t>(n, 1);
}

ModelSpec derive_sub_spec(const ModelSpec& global, double sr) {
  if (!(sr > 0.0 && sr <= 1.0)) throw ConfigError("shrinkage ratio must lie in (0, 1], got " + std::to_string(sr));
  global.validate();
  std::vector<LayerSpec> layers = global.layers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    if (i + 1 < layers.size()) l.out_channels = scaled_channels(l.out_channels, sr);
    if (i > 0) l.in_channels = 0;
  }
  ModelSpec sub = make_sequential(global.input_shape, global.num_classes, layers);
  for (std::size_t i = 0; i < layers.size(); ++i) sub.layers[i].activation = global.layers[i].activation;
  return sub;
}

CompressionPlan derive_plan(const ModelSpec& global, double sr, KernelPolicy policy) {
  if (policy.stride == 0) throw ConfigError("compression stride must be >= 1");
  CompressionPlan plan;
  plan.direction = Direction::compress;
  plan.sr = sr;
  plan.policy = policy;
  plan.src_spec = global;
  plan.dst_spec = derive_sub_spec(global, sr);
  const auto s = static_cast<long long>(policy.stride);
  const auto p = static_cast<long long>(policy.padding);
  auto kernel_for = [&](const std::string& layer, std::size_t d_in, std::size_t d_out) {
    const long long k = static_cast<long long>(d_in) + 2 * p - (static_cast<long long>(d_out) - 1) * s;
    if (k < 1) {
      throw ConfigError("layer " + layer + ": no kernel maps " + std::to_string(d_in) + " to " + std::to_string(d_out) +
                        " with stride " + std::to_string(s) + " and padding " + std::to_string(p));
    }
    return static_cast<std::size_t>(k);
  };
  for (std::size_t i = 0; i < global.layers.size(); ++i) {
    const auto& g = global.layers[i];
    const auto& d = plan.dst_spec.layers[i];
    CompressionLayerConfig c;
    c.layer_name = g.name;
    c.kind = g.kind;
    c.slice_count = g.k1 * g.k2;
    c.layer_k1 = g.k1;
    c.layer_k2 = g.k2;
    c.src_slice = {g.out_channels, g.in_channels};
    c.dst_slice = {d.out_channels, d.in_channels};
    c.k1 = kernel_for(g.name, g.out_channels, d.out_channels);
    c.k2 = kernel_for(g.name, g.in_channels, d.in_channels);
    c.stride = policy.stride;
    c.padding = policy.padding;
    c.has_bias = g.has_bias;
    c.bias_k1 = c.k1;
    c.bias_k2 = 1 + 2 * policy.padding;
    plan.layers.push_back(c);
  }
  plan.validate();
  return plan;
}

std::size_t solve_padding(std::size_t d_in, std::size_t d_out, std::size_t kernel, std::size_t stride) {
  if (stride == 0 || kernel == 0 || d_out == 0) throw ConfigError("solve_padding needs positive sizes");
  const long long twice_p = (static_cast<long long>(d_out) - 1) * static_cast<long long>(stride) +
                            static_cast<long long>(kernel) - static_cast<long long>(d_in);
  if (twice_p < 0 || twice_p % 2 != 0) {
    throw ConfigError("no integer padding maps " + std::to_string(d_in) + " to " + std::to_string(d_out) +
                      " with kernel " + std::to_string(kernel) + " and stride " + std::to_string(stride));
  }
  return static_cast<std::size_t>(twice_p / 2);
}

ConvParams init_conv_params(const CompressionPlan& plan, KernelInit init, std::uint64_t seed) {
  if (plan.direction != Direction::compress) throw UsageError("init_conv_params needs a compression plan");
  return init_resample_params(plan, init, seed);
}

ParameterSet compress_model(const ParameterSet& global, const CompressionPlan& plan, const ConvParams& cp,
                            const PipelineOptions& options) {
  if (plan.direction != Direction::compress) throw UsageError("compress_model needs a compression plan");
  return apply_resample(plan, cp, global, options);
}

ConvParams finetune_compression(const ParameterSet& global, const CompressionPlan& plan, ConvParams cp,
                                const Dataset& server_data, const PipelineOptions& options,
                                const FinetuneOptions& ft) {
  if (plan.direction != Direction::compress) throw UsageError("finetune_compression needs a compression plan");
  return finetune_resample(plan, global, std::move(cp), server_data, options, ft);
}

}  // namespace fedconv

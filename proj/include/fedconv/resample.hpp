// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fedconv/model.hpp"

namespace fedconv {

/// Machinery shared by compression (conv2d over parameter slices, large to
/// small) and dilation (transposed_conv2d, small to large).

enum class Direction { compress, dilate };

/// Square stride and padding applied on both slice axes.
struct KernelPolicy {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// How one model layer is resampled. Every weight slice is a single-channel
/// [1, 1, O, I] plane; the layer has `slice_count` of them (k1 * k2 of the
/// model layer, 1 for dense).
struct ResampleLayerConfig {
  std::string layer_name;
  LayerKind kind = LayerKind::dense;
  std::size_t slice_count = 1;
  std::size_t layer_k1 = 1, layer_k2 = 1;
  Shape src_slice;  // {O, I}
  Shape dst_slice;  // {O', I'}
  std::size_t k1 = 1, k2 = 1;
  std::size_t stride = 1, padding = 0;
  bool has_bias = false;
  // Biases travel as a [1, 1, d, 1] plane; width 1 + 2p keeps one column.
  std::size_t bias_k1 = 1, bias_k2 = 1;

  bool operator==(const ResampleLayerConfig&) const = default;
};

struct ResamplePlan {
  Direction direction = Direction::compress;
  double sr = 1.0;
  KernelPolicy policy;
  ModelSpec src_spec;
  ModelSpec dst_spec;
  std::vector<ResampleLayerConfig> layers;

  const ModelSpec& global_spec() const { return direction == Direction::compress ? src_spec : dst_spec; }
  const ModelSpec& sub_spec() const { return direction == Direction::compress ? dst_spec : src_spec; }
  /// Throws ConfigError unless every config satisfies the shape law.
  void validate() const;
};

/// Component switches of the pipeline. Everything on is the full stack.
struct PipelineOptions {
  bool residual = true;     // two 1x1 layers plus a residual connection
  bool mlr = true;          // modified leaky ReLU on generated weights
  bool weight_norm = true;  // magnitude/direction kernels
  double s_p = 0.85;
  double s_n = 0.001;
};

enum class KernelInit {
  uniform,  // +-1/sqrt(k1*k2)
  delta,    // unit tap aligned with the slice origin: truncation or zero-padding
};

/// Trainable tensors of one pipeline, keyed "<layer>.pre1.weight",
/// "<layer>.k<i>.direction", "<layer>.k<i>.magnitude", "<layer>.bias_k.*", ...
using ResampleParams = NamedTensors;

/// Pre-layer 1 is random, pre-layer 2 is zero, so the residual branch starts
/// at the identity and both layers still receive gradients.
ResampleParams init_resample_params(const ResamplePlan& plan, KernelInit init, std::uint64_t seed);

/// All-zero pre-layers and unit delta kernels with magnitude 1. At sr = 1
/// with s_p = 1 this reproduces the source model exactly.
ResampleParams identity_resample_params(const ResamplePlan& plan);

/// Throws ConfigError unless `params` has exactly the plan's keys and shapes.
void check_resample_params(const ResamplePlan& plan, const ResampleParams& params);

/// Differentiable pipeline: generated destination-model layers from the
/// frozen `src` model and the parameter leaves in `vars`.
std::vector<LayerVars> resample_graph(Graph& graph, const ResamplePlan& plan, const std::map<std::string, Var>& vars,
                                      const ParameterSet& src, const PipelineOptions& options);

/// Runs the pipeline and returns the generated parameters.
ParameterSet apply_resample(const ResamplePlan& plan, const ResampleParams& params, const ParameterSet& src,
                            const PipelineOptions& options);

/// lr_min + (lr_max - lr_min)(1 + cos(pi * e / T_max)) / 2 with warm
/// restarts: e is reduced modulo T_max + 1, so lr_min is reached at
/// e = T_max and lr_max again at e = T_max + 1.
double cosine_lr(std::size_t e, std::size_t t_max, double lr_min, double lr_max);

struct CosineSchedule {
  std::size_t t_max = 4;
  double lr_min = 1e-5;
  double lr_max = 1e-3;
};

enum class Optimizer {
  sgd,   // p -= lr * g
  adam,  // bias-corrected moments, beta1 0.9, beta2 0.999, eps 1e-8
};

struct FinetuneOptions {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  CosineSchedule schedule;
  bool use_schedule = true;  // false: constant lr_max
  Optimizer optimizer = Optimizer::sgd;
  std::uint64_t seed = 0;
  /// Called after every epoch with the epoch index, its lr and the params.
  std::function<void(std::size_t, double, const NamedTensors&)> on_epoch;
};

/// Trains only `params` so that the generated model minimises cross-entropy
/// on `data`; the source model is never modified.
ResampleParams finetune_resample(const ResamplePlan& plan, const ParameterSet& src, ResampleParams params,
                                 const Dataset& data, const PipelineOptions& options, const FinetuneOptions& ft);

/// Splits a conv weight [O, I, k1, k2] into k1*k2 planes [1, 1, O, I] in
/// row-major kernel order, or a dense weight [O, I] into one plane.
std::vector<Tensor> reshape_for_compression(const Tensor& weight);
/// Inverse of reshape_for_compression.
Tensor restore_from_slices(const std::vector<Tensor>& slices, const Shape& weight_shape);

}  // namespace fedconv

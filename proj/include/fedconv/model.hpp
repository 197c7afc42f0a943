// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedconv/autodiff.hpp"
#include "fedconv/dataset.hpp"

namespace fedconv {

enum class LayerKind { conv2d, dense };
enum class Activation { relu, none };

/// One layer. For dense layers `in_channels` is the flattened feature count
/// and the kernel is 1x1.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::dense;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t k1 = 1, k2 = 1;
  std::size_t stride = 1;
  Activation activation = Activation::relu;
  bool has_bias = true;

  Shape weight_shape() const;
  Shape bias_shape() const { return {out_channels}; }
  bool operator==(const LayerSpec&) const = default;
};

struct ModelSpec {
  Shape input_shape;  // {C, H, W} or {D}
  std::size_t num_classes = 0;
  std::vector<LayerSpec> layers;

  /// Checks positivity, channel compatibility after flattening, unique names
  /// and the class count. Throws ConfigError.
  void validate() const;

  /// Per-sample output shape of every layer.
  std::vector<Shape> output_shapes() const;
  /// Per-sample input shape of layer i.
  Shape layer_input_shape(std::size_t i) const;

  std::size_t parameter_count() const;
  bool operator==(const ModelSpec&) const = default;
};

/// Builds a sequential spec. Dense layers with in_channels == 0 get their
/// feature count from the preceding layer's output. The last layer's
/// activation is forced to none. Validates the result.
ModelSpec make_sequential(Shape input_shape, std::size_t num_classes, std::vector<LayerSpec> layers);

struct LayerParams {
  Tensor weight;
  std::optional<Tensor> bias;
  bool operator==(const LayerParams&) const = default;
};

/// Parameters of one model instance, in layer order.
struct ParameterSet {
  std::vector<std::string> names;
  std::vector<LayerParams> layers;

  std::size_t size() const { return layers.size(); }
  const LayerParams& at(const std::string& name) const;
  std::size_t numel() const;

  /// Flattened view keyed "<layer>.weight" / "<layer>.bias".
  NamedTensors to_named() const;
  static ParameterSet from_named(const ModelSpec& spec, const NamedTensors& named);

  /// Throws ConfigError unless names and shapes match the spec.
  void validate(const ModelSpec& spec) const;

  bool operator==(const ParameterSet&) const = default;
};

/// Uniform in +-1/sqrt(fan_in) for weights and biases.
ParameterSet init_params(const ModelSpec& spec, std::uint64_t seed);

/// Graph handles for one layer; `bias` is invalid when the layer has none.
struct LayerVars {
  Var weight;
  Var bias;
};

std::vector<LayerVars> as_vars(Graph& graph, const ParameterSet& params, bool requires_grad);

/// Differentiable forward pass. `batch` is [N, input_shape...].
Var forward(const ModelSpec& spec, std::span<const LayerVars> layers, Var batch);

/// Convenience forward pass returning logits [N, num_classes].
Tensor forward(const ModelSpec& spec, const ParameterSet& params, const Tensor& batch);

struct TrainOptions {
  std::size_t epochs = 5;
  double lr = 0.001;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

/// Mini-batch SGD on cross-entropy. Samples are reshuffled every epoch.
ParameterSet local_train(const ModelSpec& spec, const ParameterSet& params, const Dataset& data,
                         const TrainOptions& options);

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Argmax accuracy (ties go to the lowest class index) and mean
/// cross-entropy.
EvalResult evaluate(const ModelSpec& spec, const ParameterSet& params, const Dataset& data);

/// Argmax of each row of [N, K] logits, ties to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

/// Fixed-size batches over a permutation of [0, n). The last batch may be
/// short. Returns the batches in order.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::mt19937_64* shuffle);

}  // namespace fedconv

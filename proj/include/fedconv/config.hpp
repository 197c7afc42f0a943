// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fedconv/aggregation.hpp"
#include "fedconv/dataset.hpp"
#include "fedconv/model.hpp"
#include "fedconv/resample.hpp"

namespace fedconv {

inline constexpr int kConfigSchemaVersion = 1;

enum class DataSource { mnist, synthetic };
enum class AggregationMode {
  tuned,  // weight vectors tuned on server data
  naive,  // v = 1, no per-model factors
};

/// Every knob of one experiment. Defaults follow the published
/// hyperparameters; the desk presets in configs/ shrink the scale.
struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;

  // data
  DataSource dataset = DataSource::mnist;
  std::string mnist_images;  // empty: bundled subset in the build tree
  std::string mnist_labels;
  std::size_t data_limit = 0;  // keep the first N samples, 0 keeps all
  std::size_t synthetic_classes = 10;
  std::size_t synthetic_per_class = 100;
  Shape synthetic_shape{1, 8, 8};
  double synthetic_separation = 3.0;

  // model: comma-separated "conv:<out>:<k>:<stride>" and "dense[:<out>]"
  // entries; the final dense layer emits the class count.
  std::string model = "conv:8:5:2,conv:16:5:2,dense";

  // federation
  std::size_t clients = 20;
  std::vector<double> srs{0.25, 0.5, 0.75, 1.0};  // assigned round-robin by client id
  double alpha = 0.1;
  std::size_t rounds = 100;
  double participation = 1.0;
  bool pretrain = true;
  std::size_t pretrain_epochs = 5;
  double pretrain_lr = 0.001;
  std::size_t local_epochs = 5;
  double local_lr = 0.001;
  std::size_t batch_size = 32;

  // compression and dilation pipelines
  std::size_t compress_epochs = 20;
  std::size_t dilate_epochs = 20;
  bool scheduler = true;
  std::size_t t_max = 4;
  double lr_min = 1e-5;
  double lr_max = 1e-3;
  double s_p = 0.85;
  double s_n = 0.001;
  bool residual = true;
  bool mlr = true;
  bool weight_norm = true;
  std::size_t stride = 1;
  std::size_t padding = 0;
  KernelInit kernel_init = KernelInit::uniform;
  Optimizer optimizer = Optimizer::adam;
  bool identity_pipelines = false;  // identity kernels, no fine-tuning

  // aggregation
  AggregationMode aggregation = AggregationMode::tuned;
  std::size_t agg_epochs = 10;
  double agg_lr = 0.001;
  double lambda = 0.2;
  std::size_t kld_bins = 64;
  Denormalization denorm = Denormalization::per_model;

  // run
  std::uint64_t seed = 1;
  bool checkpoints = true;
  bool report_timing = false;  // wall-clock fields break byte-identical reports

  /// Range and consistency checks. Throws ConfigError.
  void validate() const;

  PipelineOptions pipeline_options() const;
  FinetuneOptions compress_finetune(std::uint64_t seed) const;
  FinetuneOptions dilate_finetune(std::uint64_t seed) const;
  TuneOptions tune_options(std::uint64_t seed) const;
  KernelPolicy kernel_policy() const { return {stride, padding}; }
};

/// Parses "key = value" lines; '#' starts a comment. `schema_version` must be
/// present and equal kConfigSchemaVersion. Unknown or repeated keys and
/// malformed values throw ConfigError.
ExperimentConfig parse_config(std::string_view text);
/// Throws IoError when the file cannot be read.
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const ExperimentConfig& config);

/// Spec for `input_shape` and `num_classes` from the model string.
ModelSpec build_model_spec(const std::string& model, const Shape& input_shape, std::size_t num_classes);

/// Loads or generates the configured dataset.
Dataset load_dataset(const ExperimentConfig& config);

/// Stable per-stage seed: changing one stage's name or index leaves the
/// others untouched.
std::uint64_t sub_seed(std::uint64_t seed, std::string_view stage, std::uint64_t a = 0, std::uint64_t b = 0);

}  // namespace fedconv

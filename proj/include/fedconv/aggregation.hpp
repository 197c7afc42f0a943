// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fedconv/model.hpp"

namespace fedconv {

/// v[j][l]: one scalar per model j and layer l.
using WeightVectors = std::vector<std::vector<double>>;

WeightVectors unit_weights(std::size_t models, std::size_t layers);

struct Range {
  double min = 0.0;
  double max = 0.0;
  double span() const { return max - min; }
};

/// Ranges of one layer's weight and (optional) bias before normalization.
struct LayerRange {
  Range weight;
  std::optional<Range> bias;
};

/// [model][layer] ranges.
using AffineRecord = std::vector<std::vector<LayerRange>>;

struct NormalizedModels {
  std::vector<ParameterSet> models;
  AffineRecord records;
};

/// Per model and per tensor: x' = (x - min) / (max - min), or 0.5 when the
/// tensor is constant. Throws NumericalError on NaN or Inf.
NormalizedModels normalize_params(std::span<const ParameterSet> models);

/// Inverse of normalize_params for one model.
ParameterSet denormalize(const ParameterSet& normalized, const std::vector<LayerRange>& ranges);

/// How the aggregate leaves normalized space.
enum class Denormalization {
  /// Each model's term is mapped back with its own range:
  ///   W = sum_j c_j k_j (min_j + v_j (max_j - min_j) w'_j),  c_j = s_j / sum s.
  /// With v = 1 and k = 1 this is exactly sample-weighted averaging.
  per_model,
  /// The combined normalized value is mapped back with the c-weighted mean
  /// range: W = mean_min + mean_span * sum_j c_j k_j v_j w'_j.
  mean_record,
};

struct AggregateOptions {
  Denormalization denorm = Denormalization::per_model;
  /// Per-model factors k_j (empty means all ones).
  std::vector<double> model_factors;
};

/// sum_j v_j s_j x_j / sum_j s_j elementwise over already-normalized models.
ParameterSet combine_normalized(std::span<const ParameterSet> normalized, const WeightVectors& v,
                                std::span<const double> s);

/// Normalizes, combines with v and s, and de-normalizes.
ParameterSet weighted_aggregate(std::span<const ParameterSet> models, const WeightVectors& v,
                                std::span<const double> s, const AggregateOptions& options = {});

/// weighted_aggregate with v = 1 and no per-model factors.
ParameterSet naive_average(std::span<const ParameterSet> models, std::span<const double> s,
                           Denormalization denorm = Denormalization::per_model);

/// sum_i p_i log(p_i / q_i) in nats.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// Sum over layers of KL(global_prev || model_j) between `bins`-bucket
/// histograms over the union value range, smoothed with 1e-8.
double kld(const ParameterSet& model, const ParameterSet& global_prev, std::size_t bins = 64);

/// k_j = exp(-lambda * KLD_j), rescaled so that sum_j c_j k_j = 1.
std::vector<double> kld_factors(std::span<const double> klds, std::span<const double> s, double lambda);

struct TuneOptions {
  double lambda = 0.2;
  std::size_t epochs = 10;
  double lr = 0.001;
  std::size_t batch_size = 32;
  std::size_t kld_bins = 64;
  Denormalization denorm = Denormalization::per_model;
  std::uint64_t seed = 0;
};

struct TuneResult {
  WeightVectors v;
  std::vector<double> klds;
  std::vector<double> factors;  // k_j applied to each model's contribution
  double initial_loss = 0.0;    // server loss at v = 1
  double final_loss = 0.0;      // server loss at the returned v
  Denormalization denorm = Denormalization::per_model;
  /// Options for weighted_aggregate that reproduce the tuned aggregate.
  AggregateOptions aggregate_options() const;
};

/// Gradient descent on v for the cross-entropy of the aggregate on server
/// data plus lambda * sum_j KLD_j. The KLD terms do not depend on v; they
/// enter through the per-model factors k_j. The returned iterate is the one
/// with the lowest full-data loss seen, so final_loss <= initial_loss.
TuneResult tune_weight_vectors(const ModelSpec& spec, std::span<const ParameterSet> models,
                               std::span<const double> s, const ParameterSet& global_prev, const Dataset& server_data,
                               const TuneOptions& options);

}  // namespace fedconv

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fedconv/federation.hpp"

namespace fedconv {

enum class MIUnit { bits, nats };

struct MIEstimate {
  double value = 0.0;
  std::size_t bins = 0;
  std::size_t samples = 0;  // paired values used
  MIUnit unit = MIUnit::bits;
};

/// Plug-in estimate from a bins x bins joint histogram over each side's own
/// value range. Both sets are flattened in layer order (weight then bias).
/// Equal lengths pair values by position; otherwise each side is sorted, the
/// longer one is thinned to evenly spaced ranks, and values pair by rank.
MIEstimate mutual_information(const ParameterSet& a, const ParameterSet& b, std::size_t bins = 32,
                              MIUnit unit = MIUnit::bits);
MIEstimate mutual_information(std::span<const double> a, std::span<const double> b, std::size_t bins = 32,
                              MIUnit unit = MIUnit::bits);

/// Plug-in entropy of a bins-bucket histogram over the value range.
double entropy(std::span<const double> x, std::size_t bins, MIUnit unit = MIUnit::bits);

enum class PruneLevel {
  channel,  // rank a layer's input channels by L1 norm; drop the producing filters too
  filter,   // rank a layer's output filters (weights and bias) by L1 norm
};

struct PrunedModel {
  ModelSpec spec;
  ParameterSet params;
};

/// Keeps round(ratio * c) channels at every interior boundary (the model
/// input and the class outputs stay). Throws ConfigError unless
/// 0 < ratio < 1 or when a boundary would keep no channel.
PrunedModel magnitude_prune(const ModelSpec& spec, const ParameterSet& params, double ratio, PruneLevel level);

/// Classical FedAvg on the same splits, partitions and seeds as the main
/// run: every client trains the smallest-sr architecture built directly at
/// that size, and the server takes the sample-weighted mean. Server data is
/// used only for evaluation.
std::vector<RoundReport> fedavg_baseline(const Experiment& experiment);
std::vector<RoundReport> fedavg_baseline(const ExperimentConfig& config);

/// Sample-weighted parameter mean.
ParameterSet fedavg(std::span<const ParameterSet> models, std::span<const double> s);

struct PruningMiRow {
  std::string name;
  double mi = 0.0;  // against the trained model, bits
  double accuracy = 0.0;
  std::size_t parameters = 0;
};

/// Trains `spec` on `train`, then compares it with its convolutional
/// compression at sr = ratio (fine-tuned on `server`) and with channel- and
/// filter-level magnitude pruning at the same ratio. Rows: self, conv,
/// channel, filter. Accuracies are on `test`.
std::vector<PruningMiRow> pruning_mi_study(const ModelSpec& spec, const Dataset& train, const Dataset& server,
                                           const Dataset& test, double ratio, const ExperimentConfig& config,
                                           std::size_t train_epochs);

}  // namespace fedconv

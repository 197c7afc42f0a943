// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedconv/aggregation.hpp"
#include "fedconv/compression.hpp"
#include "fedconv/config.hpp"
#include "fedconv/dilation.hpp"

namespace fedconv {

struct DataSplits {
  Dataset server_train;
  Dataset server_test;
  Dataset client_pool_train;
  Dataset client_pool_test;
  // source indices of each split, in split order
  std::vector<std::size_t> server_train_idx, server_test_idx, pool_train_idx, pool_test_idx;
};

/// Stratified 5/20/70/5 percent split. Per class the counts are rounded so
/// that every class contributes to every split; throws ConfigError when a
/// class has fewer than 20 samples.
DataSplits split_dataset(const Dataset& data, std::uint64_t seed);

/// proportions[c][j]: share of class c that goes to client j.
using ClassProportions = std::vector<std::vector<double>>;

ClassProportions dirichlet_proportions(std::size_t classes, std::size_t clients, double alpha, std::mt19937_64& rng);

/// Splits each class's indices by the given shares. Disjoint and exhaustive.
std::vector<std::vector<std::size_t>> assign_by_proportions(const Dataset& pool, const ClassProportions& p,
                                                            std::uint64_t seed);

struct Partition {
  std::vector<std::vector<std::size_t>> clients;  // indices into the pool
  ClassProportions proportions;
};

/// Per class, shares drawn from Dir(alpha) across clients. Draws that leave a
/// client empty are redrawn. Throws ConfigError when clients > pool size or
/// alpha <= 0.
Partition partition_dirichlet(const Dataset& pool, std::size_t clients, double alpha, std::uint64_t seed);

struct ClientProfile {
  std::size_t client_id = 0;
  double sr = 1.0;
  std::size_t sample_count = 0;
  std::uint64_t seed = 0;
};

/// What a client sends back: parameters, s_j and an accuracy measured on its
/// own test data (absent when it holds none).
struct ClientUpdate {
  std::size_t client_id = 0;
  double sr = 1.0;
  ParameterSet params;
  std::size_t sample_count = 0;
  std::optional<double> test_accuracy;
};

/// A simulated device. Its data is private: the server only sees updates.
class Client {
 public:
  Client(ClientProfile profile, Dataset train, Dataset test);
  const ClientProfile& profile() const { return profile_; }
  /// Local SGD on the received sub-model, then evaluation on local test data.
  ClientUpdate train_round(const ModelSpec& sub_spec, const ParameterSet& sub_model, const TrainOptions& options) const;
  /// Class histogram of the training data.
  std::vector<std::size_t> histogram() const { return train_.class_histogram(); }

 private:
  ClientProfile profile_;
  Dataset train_;
  Dataset test_;
};

struct FederationState {
  std::size_t round = 1;  // next round to run
  ModelSpec global_spec;
  ParameterSet global;
  std::map<double, ConvParams> conv_params;  // per device type (sr)
  std::vector<ClientProfile> clients;
  std::uint64_t seed = 0;
};

struct ClientResult {
  std::size_t client_id = 0;
  double sr = 1.0;
  std::size_t sample_count = 0;
  std::optional<double> accuracy;
};

struct RoundReport {
  std::size_t round = 0;
  double global_accuracy = 0.0;  // server test split
  double global_loss = 0.0;
  std::vector<ClientResult> clients;
  double mean_client_accuracy = 0.0;  // over clients with test data
  WeightVectors v;
  std::vector<double> klds;
  double agg_initial_loss = 0.0;
  double agg_final_loss = 0.0;
  std::map<std::string, double> timing;  // seconds per step, when enabled
};

/// Server-side data only: the server never holds client partitions.
struct ServerData {
  Dataset train;
  Dataset test;
};

/// Fresh state for `config`: global model initialised from the "init" seed.
FederationState init_state(const ExperimentConfig& config, const ModelSpec& global_spec,
                           std::vector<ClientProfile> clients);

/// e_p epochs of SGD on server data. Throws UsageError unless state.round == 1.
void pretrain_global(FederationState& state, const Dataset& server_train, std::size_t epochs, double lr,
                     std::size_t batch_size);

/// One round: compression per device type, local training, per-client
/// dilation, weight tuning and aggregation, evaluation. Errors are rethrown
/// with the failing step named. `updates_out` receives the client uploads.
RoundReport run_round(FederationState& state, const std::vector<Client>& clients, const ServerData& server,
                      const ExperimentConfig& config, std::vector<ClientUpdate>* updates_out = nullptr);

/// Splits, partitions, client setup and the global spec for a config.
struct Experiment {
  ExperimentConfig config;
  ModelSpec global_spec;
  ServerData server;
  std::vector<Client> clients;
};

Experiment setup_experiment(const ExperimentConfig& config);
/// Same as above for an already loaded dataset.
Experiment setup_experiment(const ExperimentConfig& config, const Dataset& data);

/// Runs config.rounds rounds after optional pre-training. When `out_dir` is
/// given, writes round_0/global.fcps and per round round_<r>/global.fcps,
/// client_<id>.fcps and report.json.
std::vector<RoundReport> run_experiment(const Experiment& experiment,
                                        const std::optional<std::filesystem::path>& out_dir = std::nullopt);
std::vector<RoundReport> run_experiment(const ExperimentConfig& config,
                                        const std::optional<std::filesystem::path>& out_dir = std::nullopt);

}  // namespace fedconv

// SPDX-License-Identifier: Apache-2.0
// fedconv: run experiments, inspect partitions and run ablations.
#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "fedconv/diagnostics.hpp"
#include "fedconv/errors.hpp"
#include "fedconv/federation.hpp"
#include "fedconv/metrics.hpp"

namespace {

using namespace fedconv;

struct Common {
  std::string config;
  std::optional<std::size_t> rounds;
  std::optional<std::uint64_t> seed;
};

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = load_config(c.config);
  if (c.rounds) cfg.rounds = *c.rounds;
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

void print_round(const RoundReport& r) {
  std::printf("round %3zu  global_acc %.4f  global_loss %.4f  mean_client_acc %.4f\n", r.round, r.global_accuracy,
              r.global_loss, r.mean_client_accuracy);
  std::fflush(stdout);
}

int cmd_run(const Common& c, const std::string& out) {
  const ExperimentConfig cfg = load(c);
  const Experiment e = setup_experiment(cfg);
  std::optional<std::filesystem::path> dir;
  if (!out.empty()) dir = out;
  const auto reports = run_experiment(e, dir);
  for (const auto& r : reports) print_round(r);
  if (dir && !reports.empty()) {
    emit_metrics(reports, *dir / "metrics.json", MetricsFormat::json);
    emit_metrics(reports, *dir / "metrics.csv", MetricsFormat::csv);
  }
  return 0;
}

int cmd_partition_stats(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const Experiment e = setup_experiment(cfg);
  std::printf("client  sr     samples  class histogram\n");
  for (const auto& client : e.clients) {
    std::printf("%6zu  %.2f  %7zu ", client.profile().client_id, client.profile().sr, client.profile().sample_count);
    for (std::size_t n : client.histogram()) std::printf(" %4zu", n);
    std::printf("\n");
  }
  return 0;
}

int cmd_ablate(const Common& c, const std::string& mode) {
  ExperimentConfig cfg = load(c);
  if (mode == "naive-agg" || mode == "no-pretrain" || mode == "fedavg-baseline") {
    ExperimentConfig other = cfg;
    std::string a = "fedconv", b;
    if (mode == "naive-agg") {
      other.aggregation = AggregationMode::naive;
      b = "naive";
    } else if (mode == "no-pretrain") {
      other.pretrain = false;
      b = "no-pretrain";
    } else {
      b = "fedavg";
    }
    const Experiment e = setup_experiment(cfg);
    const auto ra = run_experiment(e);
    const auto rb = mode == "fedavg-baseline" ? fedavg_baseline(e) : run_experiment(setup_experiment(other));
    std::printf("round  %s_global  %s_client  %s_global  %s_client\n", a.c_str(), a.c_str(), b.c_str(), b.c_str());
    for (std::size_t i = 0; i < ra.size(); ++i) {
      std::printf("%5zu  %.4f  %.4f  %.4f  %.4f\n", ra[i].round, ra[i].global_accuracy, ra[i].mean_client_accuracy,
                  rb[i].global_accuracy, rb[i].mean_client_accuracy);
    }
    return 0;
  }
  if (mode == "pruning-mi") {
    const Dataset data = load_dataset(cfg);
    const DataSplits s = split_dataset(data, sub_seed(cfg.seed, "split"));
    const ModelSpec spec = build_model_spec(cfg.model, data.sample_shape(), data.class_count);
    const double ratio = 0.5;
    const auto rows = pruning_mi_study(spec, s.client_pool_train, s.server_train, s.server_test, ratio, cfg, 3);
    std::printf("ratio %.2f\nmodel     MI(bits)  accuracy  parameters\n", ratio);
    for (const auto& r : rows) std::printf("%-8s  %8.4f  %8.4f  %10zu\n", r.name.c_str(), r.mi, r.accuracy, r.parameters);
    return 0;
  }
  throw ConfigError("unknown ablation mode '" + mode + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heterogeneous federated learning simulator with convolutional compression"};
  app.require_subcommand(1);
  Common common;
  std::string out, mode;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "experiment config file")->required();
    sub->add_option("--rounds", common.rounds, "override the number of rounds");
    sub->add_option("--seed", common.seed, "override the seed");
  };
  auto* run = app.add_subcommand("run", "run an experiment");
  add_common(run);
  run->add_option("--out", out, "directory for checkpoints and reports");
  auto* stats = app.add_subcommand("partition-stats", "print per-client class histograms");
  add_common(stats);
  auto* ablate = app.add_subcommand("ablate", "run an ablation");
  add_common(ablate);
  ablate->add_option("--mode", mode, "ablation")
      ->required()
      ->check(CLI::IsMember({"naive-agg", "no-pretrain", "fedavg-baseline", "pruning-mi"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    if (*run) return cmd_run(common, out);
    if (*stats) return cmd_partition_stats(common);
    return cmd_ablate(common, mode);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

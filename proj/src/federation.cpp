// SPDX-License-Identifier: Apache-2.0
#include "fedconv/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "fedconv/container.hpp"
#include "fedconv/errors.hpp"
#include "fedconv/metrics.hpp"

namespace fedconv {

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& d) {
  std::vector<std::vector<std::size_t>> by(d.class_count);
  for (std::size_t i = 0; i < d.size(); ++i) by.at(static_cast<std::size_t>(d.labels[i])).push_back(i);
  return by;
}

// Largest-remainder split of `total` in proportion to `weights`.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<std::size_t>& weights) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> out(weights.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t given = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * static_cast<double>(weights[i]) / sum;
    out[i] = static_cast<std::size_t>(std::floor(exact));
    given += out[i];
    rem.emplace_back(-(exact - std::floor(exact)), i);
  }
  std::sort(rem.begin(), rem.end());
  for (std::size_t k = 0; given < total; ++k, ++given) ++out[rem[k % rem.size()].second];
  return out;
}

// Rethrows a library error with the round and step prepended, keeping its type.
template <class F>
auto in_step(std::size_t round, const char* step, F&& f) {
  const std::string where = "round " + std::to_string(round) + ", " + step + ": ";
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(where + e.what());
  } catch (const UsageError& e) {
    throw UsageError(where + e.what());
  } catch (const InputError& e) {
    throw InputError(where + e.what());
  } catch (const FormatError& e) {
    throw FormatError(where + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(where + e.what());
  } catch (const IoError& e) {
    throw IoError(where + e.what());
  }
}

class StepTimer {
 public:
  explicit StepTimer(std::map<std::string, double>& sink) : sink_(sink) {}
  template <class F>
  auto operator()(const std::string& name, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    auto out = f();
    sink_[name] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }

 private:
  std::map<std::string, double>& sink_;
};

}  // namespace

DataSplits split_dataset(const Dataset& data, std::uint64_t seed) {
  data.validate();
  const auto by_class = indices_by_class(data);
  std::vector<std::size_t> sizes;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() < 20) {
      throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                        " samples; stratified splitting needs at least 20 per class");
    }
    sizes.push_back(by_class[c].size());
  }
  const std::size_t n = data.size();
  const auto round_share = [n](double f) { return static_cast<std::size_t>(std::llround(f * static_cast<double>(n))); };
  const auto q_server_train = apportion(round_share(0.05), sizes);
  const auto q_server_test = apportion(round_share(0.20), sizes);
  const auto q_pool_test = apportion(round_share(0.05), sizes);

  DataSplits s;
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto idx = by_class[c];
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t at = 0;
    auto take = [&](std::vector<std::size_t>& dst, std::size_t count) {
      count = std::max<std::size_t>(1, std::min(count, idx.size() - at));
      dst.insert(dst.end(), idx.begin() + static_cast<long>(at), idx.begin() + static_cast<long>(at + count));
      at += count;
    };
    take(s.server_train_idx, q_server_train[c]);
    take(s.server_test_idx, q_server_test[c]);
    take(s.pool_test_idx, q_pool_test[c]);
    s.pool_train_idx.insert(s.pool_train_idx.end(), idx.begin() + static_cast<long>(at), idx.end());
  }
  for (auto* v : {&s.server_train_idx, &s.server_test_idx, &s.pool_train_idx, &s.pool_test_idx})
    std::sort(v->begin(), v->end());
  s.server_train = data.subset(s.server_train_idx);
  s.server_test = data.subset(s.server_test_idx);
  s.client_pool_train = data.subset(s.pool_train_idx);
  s.client_pool_test = data.subset(s.pool_test_idx);
  return s;
}

ClassProportions dirichlet_proportions(std::size_t classes, std::size_t clients, double alpha, std::mt19937_64& rng) {
  if (!(alpha > 0.0)) throw ConfigError("Dirichlet alpha must be > 0");
  ClassProportions p(classes, std::vector<double>(clients));
  std::gamma_distribution<double> gamma(alpha, 1.0);
  for (auto& row : p) {
    double sum = 0.0;
    // Tiny alpha can underflow every draw; redraw in that case.
    while (!(sum > 0.0)) {
      sum = 0.0;
      for (auto& x : row) sum += (x = gamma(rng));
    }
    for (auto& x : row) x /= sum;
  }
  return p;
}

std::vector<std::vector<std::size_t>> assign_by_proportions(const Dataset& pool, const ClassProportions& p,
                                                            std::uint64_t seed) {
  if (p.size() != pool.class_count) throw UsageError("one proportion row per class required");
  const std::size_t clients = p.empty() ? 0 : p[0].size();
  std::vector<std::vector<std::size_t>> out(clients);
  std::mt19937_64 rng(seed);
  const auto by_class = indices_by_class(pool);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto idx = by_class[c];
    std::shuffle(idx.begin(), idx.end(), rng);
    double cum = 0.0;
    std::size_t start = 0;
    for (std::size_t j = 0; j < clients; ++j) {
      cum += p[c][j];
      std::size_t end = j + 1 == clients ? idx.size()
                                         : std::min(idx.size(), static_cast<std::size_t>(std::llround(
                                                                    cum * static_cast<double>(idx.size()))));
      end = std::max(end, start);
      out[j].insert(out[j].end(), idx.begin() + static_cast<long>(start), idx.begin() + static_cast<long>(end));
      start = end;
    }
  }
  for (auto& v : out) std::sort(v.begin(), v.end());
  return out;
}

Partition partition_dirichlet(const Dataset& pool, std::size_t clients, double alpha, std::uint64_t seed) {
  if (clients == 0) throw ConfigError("need at least one client");
  if (clients > pool.size()) {
    throw ConfigError(std::to_string(clients) + " clients but only " + std::to_string(pool.size()) + " samples");
  }
  if (!(alpha > 0.0)) throw ConfigError("Dirichlet alpha must be > 0");
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Partition part;
    part.proportions = dirichlet_proportions(pool.class_count, clients, alpha, rng);
    part.clients = assign_by_proportions(pool, part.proportions, rng());
    if (std::all_of(part.clients.begin(), part.clients.end(), [](const auto& v) { return !v.empty(); })) return part;
  }
  throw ConfigError("could not draw a partition giving every client a sample; raise alpha or lower clients");
}

Client::Client(ClientProfile profile, Dataset train, Dataset test)
    : profile_(std::move(profile)), train_(std::move(train)), test_(std::move(test)) {
  profile_.sample_count = train_.size();
}

ClientUpdate Client::train_round(const ModelSpec& sub_spec, const ParameterSet& sub_model,
                                 const TrainOptions& options) const {
  ClientUpdate u;
  u.client_id = profile_.client_id;
  u.sr = profile_.sr;
  u.sample_count = train_.size();
  u.params = local_train(sub_spec, sub_model, train_, options);
  if (!test_.empty()) u.test_accuracy = evaluate(sub_spec, u.params, test_).accuracy;
  return u;
}

FederationState init_state(const ExperimentConfig& config, const ModelSpec& global_spec,
                           std::vector<ClientProfile> clients) {
  FederationState s;
  s.round = 1;
  s.global_spec = global_spec;
  s.global = init_params(global_spec, sub_seed(config.seed, "init"));
  s.clients = std::move(clients);
  s.seed = config.seed;
  return s;
}

void pretrain_global(FederationState& state, const Dataset& server_train, std::size_t epochs, double lr,
                     std::size_t batch_size) {
  if (state.round != 1) throw UsageError("pre-training is only allowed before round 1");
  if (epochs == 0) return;
  TrainOptions o{epochs, lr, batch_size, sub_seed(state.seed, "pretrain")};
  state.global = local_train(state.global_spec, state.global, server_train, o);
}

RoundReport run_round(FederationState& state, const std::vector<Client>& clients, const ServerData& server,
                      const ExperimentConfig& config, std::vector<ClientUpdate>* updates_out) {
  const std::size_t r = state.round;
  state.global.validate(state.global_spec);
  if (clients.empty()) throw UsageError("round " + std::to_string(r) + ": no clients");
  RoundReport report;
  report.round = r;
  std::map<std::string, double> timing;
  StepTimer timed(timing);
  const PipelineOptions pipe = config.pipeline_options();

  // participating clients, in id order
  std::vector<std::size_t> chosen(clients.size());
  std::iota(chosen.begin(), chosen.end(), 0);
  if (config.participation < 1.0) {
    const auto k = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(config.participation * static_cast<double>(clients.size()))));
    std::mt19937_64 rng(sub_seed(state.seed, "participation", r));
    std::shuffle(chosen.begin(), chosen.end(), rng);
    chosen.resize(k);
    std::sort(chosen.begin(), chosen.end());
  }

  // (a) compression per device type
  std::map<double, CompressionPlan> plans;
  std::map<double, ParameterSet> sub_models;
  for (std::size_t i : chosen) plans.emplace(clients[i].profile().sr, CompressionPlan{});
  in_step(r, "compression", [&] {
    for (auto& [sr, plan] : plans) {
      plan = derive_plan(state.global_spec, sr, config.kernel_policy());
      ConvParams cp;
      if (config.identity_pipelines) {
        cp = identity_resample_params(plan);
      } else {
        auto it = state.conv_params.find(sr);
        cp = it != state.conv_params.end()
                 ? it->second
                 : init_conv_params(plan, config.kernel_init,
                                    sub_seed(state.seed, "init.conv", static_cast<std::uint64_t>(sr * 1e6)));
        cp = timed("compression", [&] {
          return finetune_compression(state.global, plan, cp, server.train, pipe,
                                      config.compress_finetune(sub_seed(state.seed, "compress", r,
                                                                        static_cast<std::uint64_t>(sr * 1e6))));
        });
      }
      sub_models[sr] = compress_model(state.global, plan, cp, pipe);
      state.conv_params[sr] = std::move(cp);
    }
    return 0;
  });

  // (b, c) dispatch and local training
  std::vector<ClientUpdate> updates = in_step(r, "local training", [&] {
    std::vector<ClientUpdate> out;
    for (std::size_t i : chosen) {
      const auto& c = clients[i];
      const double sr = c.profile().sr;
      TrainOptions o{config.local_epochs, config.local_lr, config.batch_size, sub_seed(c.profile().seed, "local", r)};
      out.push_back(timed("local_training", [&] { return c.train_round(plans.at(sr).dst_spec, sub_models.at(sr), o); }));
    }
    return out;
  });

  // (d) dilation per client
  std::vector<ParameterSet> dilated = in_step(r, "dilation", [&] {
    std::vector<ParameterSet> out;
    for (const auto& u : updates) {
      const TCPlan tc = derive_tc_plan(plans.at(u.sr));
      TCParams tp;
      if (config.identity_pipelines) {
        tp = identity_resample_params(tc);
      } else {
        tp = init_tc_params(tc, config.kernel_init, sub_seed(state.seed, "init.tc", r, u.client_id));
        tp = timed("dilation", [&] {
          return finetune_dilation(u.params, tc, tp, server.train, pipe,
                                   config.dilate_finetune(sub_seed(state.seed, "dilate", r, u.client_id)));
        });
      }
      out.push_back(dilate_model(u.params, tc, tp, pipe));
    }
    return out;
  });

  // (e) weight tuning and aggregation
  std::vector<double> s;
  for (const auto& u : updates) s.push_back(static_cast<double>(u.sample_count));
  ParameterSet next = in_step(r, "aggregation", [&] {
    return timed("aggregation", [&] {
      if (config.aggregation == AggregationMode::naive) {
        report.v = unit_weights(dilated.size(), state.global_spec.layers.size());
        return naive_average(dilated, s, config.denorm);
      }
      const TuneResult t = tune_weight_vectors(state.global_spec, dilated, s, state.global, server.train,
                                               config.tune_options(sub_seed(state.seed, "tune", r)));
      report.v = t.v;
      report.klds = t.klds;
      report.agg_initial_loss = t.initial_loss;
      report.agg_final_loss = t.final_loss;
      return weighted_aggregate(dilated, t.v, s, t.aggregate_options());
    });
  });

  // (f) evaluation
  in_step(r, "evaluation", [&] {
    const EvalResult g = evaluate(state.global_spec, next, server.test);
    report.global_accuracy = g.accuracy;
    report.global_loss = g.loss;
    double sum = 0.0;
    std::size_t counted = 0;
    for (const auto& u : updates) {
      report.clients.push_back({u.client_id, u.sr, u.sample_count, u.test_accuracy});
      if (u.test_accuracy) {
        sum += *u.test_accuracy;
        ++counted;
      }
    }
    report.mean_client_accuracy = counted ? sum / static_cast<double>(counted) : 0.0;
    return 0;
  });

  state.global = std::move(next);
  ++state.round;
  if (config.report_timing) report.timing = timing;
  if (updates_out) *updates_out = std::move(updates);
  return report;
}

Experiment setup_experiment(const ExperimentConfig& config) { return setup_experiment(config, load_dataset(config)); }

Experiment setup_experiment(const ExperimentConfig& config, const Dataset& data) {
  config.validate();
  Experiment e;
  e.config = config;
  const DataSplits splits = split_dataset(data, sub_seed(config.seed, "split"));
  e.global_spec = build_model_spec(config.model, data.sample_shape(), data.class_count);
  e.server = {splits.server_train, splits.server_test};
  const Partition part =
      partition_dirichlet(splits.client_pool_train, config.clients, config.alpha, sub_seed(config.seed, "partition"));
  const auto test_parts =
      assign_by_proportions(splits.client_pool_test, part.proportions, sub_seed(config.seed, "partition.test"));
  for (std::size_t j = 0; j < config.clients; ++j) {
    ClientProfile p;
    p.client_id = j;
    p.sr = config.srs[j % config.srs.size()];
    p.seed = sub_seed(config.seed, "client", j);
    e.clients.emplace_back(p, splits.client_pool_train.subset(part.clients[j]),
                           splits.client_pool_test.subset(test_parts[j]));
  }
  return e;
}

std::vector<RoundReport> run_experiment(const Experiment& experiment,
                                        const std::optional<std::filesystem::path>& out_dir) {
  const ExperimentConfig& config = experiment.config;
  std::vector<ClientProfile> profiles;
  for (const auto& c : experiment.clients) profiles.push_back(c.profile());
  FederationState state = init_state(config, experiment.global_spec, profiles);
  if (config.pretrain) {
    pretrain_global(state, experiment.server.train, config.pretrain_epochs, config.pretrain_lr, config.batch_size);
  }
  auto write_text = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out || !(out << text)) throw IoError("cannot write " + p.string());
  };
  if (out_dir && config.checkpoints) {
    std::filesystem::create_directories(*out_dir / "round_0");
    save_params(*out_dir / "round_0" / "global.fcps", state.global);
  }
  std::vector<RoundReport> reports;
  for (std::size_t i = 0; i < config.rounds; ++i) {
    std::vector<ClientUpdate> updates;
    reports.push_back(run_round(state, experiment.clients, experiment.server, config, &updates));
    if (out_dir) {
      const auto dir = *out_dir / ("round_" + std::to_string(reports.back().round));
      std::filesystem::create_directories(dir);
      if (config.checkpoints) {
        save_params(dir / "global.fcps", state.global);
        for (const auto& u : updates) save_params(dir / ("client_" + std::to_string(u.client_id) + ".fcps"), u.params);
      }
      write_text(dir / "report.json", report_to_json(reports.back()) + "\n");
    }
  }
  return reports;
}

std::vector<RoundReport> run_experiment(const ExperimentConfig& config,
                                        const std::optional<std::filesystem::path>& out_dir) {
  return run_experiment(setup_experiment(config), out_dir);
}

}  // namespace fedconv

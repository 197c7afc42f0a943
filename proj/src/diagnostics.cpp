// SPDX-License-Identifier: Apache-2.0
#include "fedconv/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "fedconv/errors.hpp"

namespace fedconv {

namespace {

std::vector<double> flatten(const ParameterSet& p) {
  std::vector<double> out;
  for (const auto& l : p.layers) {
    out.insert(out.end(), l.weight.data().begin(), l.weight.data().end());
    if (l.bias) out.insert(out.end(), l.bias->data().begin(), l.bias->data().end());
  }
  return out;
}

std::vector<std::size_t> bin_ids(std::span<const double> x, std::size_t bins) {
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  const double width = *hi - *lo;
  std::vector<std::size_t> out(x.size(), 0);
  if (width > 0.0) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      out[i] = std::min(bins - 1, static_cast<std::size_t>((x[i] - *lo) / width * static_cast<double>(bins)));
    }
  }
  return out;
}

double unit_scale(MIUnit unit) { return unit == MIUnit::bits ? 1.0 / std::numbers::ln2 : 1.0; }

// Evenly spaced order statistics of x, n of them.
std::vector<double> thin_sorted(std::vector<double> x, std::size_t n) {
  std::sort(x.begin(), x.end());
  if (x.size() == n) return x;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = (static_cast<double>(i) + 0.5) * static_cast<double>(x.size()) / static_cast<double>(n);
    out[i] = x[std::min(x.size() - 1, static_cast<std::size_t>(pos))];
  }
  return out;
}

// Rows `rows` and columns `cols` of a [O, I, ...] tensor; empty keeps all.
Tensor select(const Tensor& t, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols) {
  const Shape& s = t.shape();
  const std::size_t inner = t.rank() > 1 ? shape_numel(Shape(s.begin() + 2, s.end())) : 1;
  std::vector<std::size_t> r = rows, c = cols;
  if (r.empty()) {
    r.resize(s[0]);
    std::iota(r.begin(), r.end(), 0);
  }
  if (t.rank() > 1 && c.empty()) {
    c.resize(s[1]);
    std::iota(c.begin(), c.end(), 0);
  }
  Shape out_shape = s;
  out_shape[0] = r.size();
  if (t.rank() > 1) out_shape[1] = c.size();
  Tensor out(out_shape);
  std::size_t k = 0;
  for (std::size_t i : r) {
    if (t.rank() == 1) {
      out[k++] = t[i];
      continue;
    }
    for (std::size_t j : c) {
      const std::size_t base = (i * s[1] + j) * inner;
      for (std::size_t q = 0; q < inner; ++q) out[k++] = t[base + q];
    }
  }
  return out;
}

// L1 norm of each slice t[c, ...] (axis 0) or t[:, c, ...] (axis 1), with
// `group` consecutive entries of the axis forming one channel.
std::vector<double> l1_scores(const Tensor& t, std::size_t axis, std::size_t group) {
  const Shape& s = t.shape();
  const std::size_t inner = t.rank() > 2 ? shape_numel(Shape(s.begin() + 2, s.end())) : 1;
  const std::size_t cols = t.rank() > 1 ? s[1] : 1;
  std::vector<double> out(s[axis] / group, 0.0);
  for (std::size_t i = 0; i < s[0]; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      for (std::size_t q = 0; q < inner; ++q) out[(axis == 0 ? i : j) / group] += std::abs(t[(i * cols + j) * inner + q]);
  return out;
}

std::vector<std::size_t> top_k(const std::vector<double>& score, std::size_t k) {
  std::vector<std::size_t> idx(score.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<std::size_t> expand(const std::vector<std::size_t>& channels, std::size_t group) {
  std::vector<std::size_t> out;
  for (std::size_t c : channels)
    for (std::size_t g = 0; g < group; ++g) out.push_back(c * group + g);
  return out;
}

}  // namespace

double entropy(std::span<const double> x, std::size_t bins, MIUnit unit) {
  if (x.empty()) throw UsageError("entropy of an empty set");
  if (bins < 2) throw UsageError("entropy needs at least 2 bins");
  std::vector<double> h(bins, 0.0);
  for (std::size_t b : bin_ids(x, bins)) h[b] += 1.0;
  double e = 0.0;
  for (double c : h) {
    if (c > 0.0) {
      const double p = c / static_cast<double>(x.size());
      e -= p * std::log(p);
    }
  }
  return e * unit_scale(unit);
}

MIEstimate mutual_information(std::span<const double> a, std::span<const double> b, std::size_t bins, MIUnit unit) {
  if (a.empty() || b.empty()) throw UsageError("mutual information of an empty parameter set");
  if (bins < 2) throw UsageError("mutual information needs at least 2 bins");
  std::vector<double> x(a.begin(), a.end()), z(b.begin(), b.end());
  if (x.size() != z.size()) {
    const std::size_t n = std::min(x.size(), z.size());
    x = thin_sorted(std::move(x), n);
    z = thin_sorted(std::move(z), n);
  }
  const auto bx = bin_ids(x, bins), bz = bin_ids(z, bins);
  std::vector<double> joint(bins * bins, 0.0), px(bins, 0.0), pz(bins, 0.0);
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    joint[bx[i] * bins + bz[i]] += 1.0 / n;
    px[bx[i]] += 1.0 / n;
    pz[bz[i]] += 1.0 / n;
  }
  double mi = 0.0;
  for (std::size_t i = 0; i < bins; ++i)
    for (std::size_t j = 0; j < bins; ++j) {
      const double p = joint[i * bins + j];
      if (p > 0.0) mi += p * std::log(p / (px[i] * pz[j]));
    }
  return {std::max(0.0, mi) * unit_scale(unit), bins, x.size(), unit};
}

MIEstimate mutual_information(const ParameterSet& a, const ParameterSet& b, std::size_t bins, MIUnit unit) {
  const auto x = flatten(a), z = flatten(b);
  return mutual_information(std::span<const double>(x), std::span<const double>(z), bins, unit);
}

PrunedModel magnitude_prune(const ModelSpec& spec, const ParameterSet& params, double ratio, PruneLevel level) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("pruning ratio must lie in (0, 1)");
  params.validate(spec);
  const std::size_t L = spec.layers.size();
  const auto shapes = spec.output_shapes();
  // Features per channel seen by layer i + 1: the spatial size when a dense
  // layer flattens a conv output, else 1.
  auto group_after = [&](std::size_t i) {
    return spec.layers[i + 1].kind == LayerKind::dense && shapes[i].size() == 3 ? shapes[i][1] * shapes[i][2]
                                                                                  : std::size_t{1};
  };
  std::vector<std::vector<std::size_t>> kept(L);  // output channels kept by layer i; empty keeps all
  for (std::size_t i = 0; i + 1 < L; ++i) {
    const std::size_t c = spec.layers[i].out_channels;
    const auto n = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(c)));
    if (n == 0) throw ConfigError("pruning ratio " + std::to_string(ratio) + " leaves layer " + spec.layers[i].name +
                                  " with no channels");
    std::vector<double> score;
    if (level == PruneLevel::channel) {
      score = l1_scores(params.layers[i + 1].weight, 1, group_after(i));
    } else {
      score = l1_scores(params.layers[i].weight, 0, 1);
      if (params.layers[i].bias)
        for (std::size_t k = 0; k < c; ++k) score[k] += std::abs((*params.layers[i].bias)[k]);
    }
    kept[i] = top_k(score, n);
  }
  std::vector<LayerSpec> layers = spec.layers;
  PrunedModel out;
  out.params.names = params.names;
  for (std::size_t i = 0; i < L; ++i) {
    const auto cols = i == 0 ? std::vector<std::size_t>{} : expand(kept[i - 1], group_after(i - 1));
    LayerParams lp{select(params.layers[i].weight, kept[i], cols), std::nullopt};
    if (params.layers[i].bias) lp.bias = select(*params.layers[i].bias, kept[i], {});
    out.params.layers.push_back(std::move(lp));
    if (i + 1 < L) layers[i].out_channels = kept[i].size();
    if (i > 0) layers[i].in_channels = 0;
  }
  out.spec = make_sequential(spec.input_shape, spec.num_classes, layers);
  for (std::size_t i = 0; i < L; ++i) out.spec.layers[i].activation = spec.layers[i].activation;
  out.params.validate(out.spec);
  return out;
}

ParameterSet fedavg(std::span<const ParameterSet> models, std::span<const double> s) {
  if (models.empty() || models.size() != s.size()) throw UsageError("fedavg needs one sample count per model");
  const double total = std::accumulate(s.begin(), s.end(), 0.0);
  if (!(total > 0.0)) throw UsageError("fedavg needs positive sample counts");
  ParameterSet out = models[0];
  for (std::size_t l = 0; l < out.size(); ++l) {
    auto mean = [&](Tensor& dst, auto get) {
      dst = Tensor(dst.shape());
      for (std::size_t j = 0; j < models.size(); ++j) {
        const Tensor& src = get(models[j].layers[l]);
        if (src.shape() != dst.shape()) throw UsageError("fedavg models disagree on shapes");
        const double c = s[j] / total;
        for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += c * src[i];
      }
    };
    mean(out.layers[l].weight, [](const LayerParams& p) -> const Tensor& { return p.weight; });
    if (out.layers[l].bias) mean(*out.layers[l].bias, [](const LayerParams& p) -> const Tensor& { return *p.bias; });
  }
  return out;
}

std::vector<RoundReport> fedavg_baseline(const Experiment& experiment) {
  const ExperimentConfig& config = experiment.config;
  const double min_sr = *std::min_element(config.srs.begin(), config.srs.end());
  const ModelSpec spec = derive_sub_spec(experiment.global_spec, min_sr);
  ParameterSet global = init_params(spec, sub_seed(config.seed, "init"));
  std::vector<RoundReport> reports;
  const auto& clients = experiment.clients;
  for (std::size_t r = 1; r <= config.rounds; ++r) {
    std::vector<std::size_t> chosen(clients.size());
    std::iota(chosen.begin(), chosen.end(), 0);
    if (config.participation < 1.0) {
      const auto k = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::llround(config.participation * static_cast<double>(clients.size()))));
      std::mt19937_64 rng(sub_seed(config.seed, "participation", r));
      std::shuffle(chosen.begin(), chosen.end(), rng);
      chosen.resize(k);
      std::sort(chosen.begin(), chosen.end());
    }
    RoundReport rep;
    rep.round = r;
    std::vector<ParameterSet> models;
    std::vector<double> s;
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t i : chosen) {
      const auto& c = clients[i];
      TrainOptions o{config.local_epochs, config.local_lr, config.batch_size, sub_seed(c.profile().seed, "local", r)};
      ClientUpdate u = c.train_round(spec, global, o);
      rep.clients.push_back({u.client_id, min_sr, u.sample_count, u.test_accuracy});
      if (u.test_accuracy) {
        sum += *u.test_accuracy;
        ++counted;
      }
      s.push_back(static_cast<double>(u.sample_count));
      models.push_back(std::move(u.params));
    }
    global = fedavg(models, s);
    const EvalResult g = evaluate(spec, global, experiment.server.test);
    rep.global_accuracy = g.accuracy;
    rep.global_loss = g.loss;
    rep.mean_client_accuracy = counted ? sum / static_cast<double>(counted) : 0.0;
    reports.push_back(std::move(rep));
  }
  return reports;
}

std::vector<RoundReport> fedavg_baseline(const ExperimentConfig& config) {
  return fedavg_baseline(setup_experiment(config));
}

std::vector<PruningMiRow> pruning_mi_study(const ModelSpec& spec, const Dataset& train, const Dataset& server,
                                           const Dataset& test, double ratio, const ExperimentConfig& config,
                                           std::size_t train_epochs) {
  TrainOptions o{train_epochs, config.pretrain_lr, config.batch_size, sub_seed(config.seed, "mi.train")};
  const ParameterSet global = local_train(spec, init_params(spec, sub_seed(config.seed, "init")), train, o);
  std::vector<PruningMiRow> rows;
  auto add = [&](const std::string& name, const ModelSpec& s, const ParameterSet& p) {
    rows.push_back({name, mutual_information(global, p).value, evaluate(s, p, test).accuracy, p.numel()});
  };
  add("self", spec, global);
  const CompressionPlan plan = derive_plan(spec, ratio, config.kernel_policy());
  ConvParams cp = init_conv_params(plan, config.kernel_init, sub_seed(config.seed, "mi.conv"));
  cp = finetune_compression(global, plan, cp, server, config.pipeline_options(),
                            config.compress_finetune(sub_seed(config.seed, "mi.finetune")));
  add("conv", plan.dst_spec, compress_model(global, plan, cp, config.pipeline_options()));
  const PrunedModel ch = magnitude_prune(spec, global, ratio, PruneLevel::channel);
  add("channel", ch.spec, ch.params);
  const PrunedModel fi = magnitude_prune(spec, global, ratio, PruneLevel::filter);
  add("filter", fi.spec, fi.params);
  return rows;
}

}  // namespace fedconv

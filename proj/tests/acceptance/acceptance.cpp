// SPDX-License-Identifier: Apache-2.0
// Acceptance checks AC1..AC11. Each prints one PASS/FAIL line.
#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fedconv/container.hpp"
#include "fedconv/diagnostics.hpp"
#include "fedconv/errors.hpp"
#include "fedconv/ops.hpp"
#include "gradcheck.hpp"

namespace {

using namespace fedconv;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median3(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  return x[x.size() / 2];
}

std::string list(const std::vector<double>& x) {
  std::string s;
  for (double v : x) s += (s.empty() ? "" : ",") + fmt("%.4f", v);
  return s;
}

ExperimentConfig desk() { return load_config(fs::path(FEDCONV_SOURCE_DIR) / "configs" / "desk.conf"); }

void progress(const std::string& msg) {
  std::fprintf(stderr, "  %s\n", msg.c_str());
  std::fflush(stderr);
}

// AC1 ----------------------------------------------------------------------

Outcome ac1() {
  using testing::gradcheck;
  using testing::ScalarFn;
  std::mt19937_64 rng(2024);
  auto dim = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  auto normal = [&](Shape s) { return Tensor::normal(std::move(s), 1.0, rng); };
  // Contract an op's output with a fixed random tensor to get a scalar.
  auto project = [](Graph& g, Var y, const Tensor& r) { return dot(y, g.constant(r)); };

  struct Case {
    std::string op;
    ScalarFn fn;
    std::vector<Tensor> inputs;
  };
  std::vector<Case> cases;
  constexpr int kPerOp = 4;
  for (int rep = 0; rep < kPerOp; ++rep) {
    {
      const std::size_t n = dim(1, 2), ci = dim(1, 3), co = dim(1, 3), k1 = dim(1, 3), k2 = dim(1, 3);
      const std::size_t s = dim(1, 2), p = dim(0, 1), h = k1 + dim(1, 4), w = k2 + dim(1, 4);
      const Tensor r = normal({n, co, conv_out_dim(h, k1, s, p), conv_out_dim(w, k2, s, p)});
      cases.push_back({"conv2d",
                       [=](Graph& g, const std::vector<Var>& in) { return project(g, conv2d(in[0], in[1], s, p), r); },
                       {normal({n, ci, h, w}), normal({co, ci, k1, k2})}});
    }
    {
      const std::size_t n = dim(1, 2), ci = dim(1, 3), co = dim(1, 3), k1 = dim(1, 3), k2 = dim(1, 3);
      const std::size_t s = dim(1, 2), h = dim(2, 4), w = dim(2, 4);
      const std::size_t p = std::min<std::size_t>(dim(0, 1), std::min(k1, k2) - 1);
      const Tensor r = normal({n, co, tconv_out_dim(h, k1, s, p), tconv_out_dim(w, k2, s, p)});
      cases.push_back(
          {"transposed_conv2d",
           [=](Graph& g, const std::vector<Var>& in) { return project(g, transposed_conv2d(in[0], in[1], s, p), r); },
           {normal({n, ci, h, w}), normal({ci, co, k1, k2})}});
    }
    {
      const std::size_t n = dim(1, 4), i = dim(1, 5), o = dim(1, 4);
      const Tensor r = normal({n, o});
      cases.push_back({"linear", [=](Graph& g, const std::vector<Var>& in) { return project(g, linear(in[0], in[1]), r); },
                       {normal({n, i}), normal({o, i})}});
    }
    {
      const std::size_t n = dim(1, 3), c = dim(1, 4), h = dim(1, 3);
      const Shape xs = rep % 2 ? Shape{n, c, h, h} : Shape{n, c};
      const Tensor r = normal(xs);
      cases.push_back({"add_bias",
                       [=](Graph& g, const std::vector<Var>& in) { return project(g, add_bias(in[0], in[1]), r); },
                       {normal(xs), normal({c})}});
    }
    {
      const Shape xs{dim(1, 4), dim(1, 4)};
      const Tensor r = normal(xs);
      cases.push_back({"add", [=](Graph& g, const std::vector<Var>& in) { return project(g, add(in[0], in[1]), r); },
                       {normal(xs), normal(xs)}});
      const double f = std::normal_distribution<double>(0.0, 2.0)(rng);
      cases.push_back({"scale", [=](Graph& g, const std::vector<Var>& in) { return project(g, scale(in[0], f), r); },
                       {normal(xs)}});
      cases.push_back({"scale_by",
                       [=](Graph& g, const std::vector<Var>& in) { return project(g, scale_by(in[0], in[1]), r); },
                       {normal(xs), normal({1})}});
      cases.push_back({"relu", [=](Graph& g, const std::vector<Var>& in) { return project(g, relu(in[0]), r); },
                       {normal(xs)}});
      const double sp = std::uniform_real_distribution<double>(0.5, 1.0)(rng);
      const double sn = std::uniform_real_distribution<double>(0.001, 0.3)(rng);
      cases.push_back({"mlr", [=](Graph& g, const std::vector<Var>& in) { return project(g, mlr(in[0], sp, sn), r); },
                       {normal(xs)}});
      cases.push_back({"reshape",
                       [=](Graph& g, const std::vector<Var>& in) {
                         return project(g, reshape(in[0], {xs[1], xs[0]}), r.reshaped({xs[1], xs[0]}));
                       },
                       {normal(xs)}});
      cases.push_back({"sum", [](Graph&, const std::vector<Var>& in) { return sum(in[0]); }, {normal(xs)}});
      cases.push_back({"dot", [](Graph&, const std::vector<Var>& in) { return dot(in[0], in[1]); }, {normal(xs), normal(xs)}});
    }
    {
      // Slices of one element have an identically zero direction gradient,
      // where a relative error only measures rounding noise.
      const std::size_t o = dim(1, 4), i = dim(2, 3), k = dim(1, 3);
      const Shape ds = rep % 2 ? Shape{o, i, k, k} : Shape{o, i};
      const Tensor r = normal(ds);
      cases.push_back({"weight_norm",
                       [=](Graph& g, const std::vector<Var>& in) { return project(g, weight_norm(in[0], in[1]), r); },
                       {normal(ds), normal({o})}});
    }
    {
      const std::size_t n = dim(1, 4), k = dim(2, 5);
      std::vector<int> labels(n);
      for (auto& l : labels) l = static_cast<int>(dim(0, k - 1));
      cases.push_back({"cross_entropy",
                       [=](Graph&, const std::vector<Var>& in) { return cross_entropy(in[0], labels); },
                       {normal({n, k})}});
    }
    {
      const std::size_t o = dim(1, 3), i = dim(1, 3), k1 = dim(1, 3), k2 = dim(1, 3);
      const std::size_t row = dim(0, k1 - 1), col = dim(0, k2 - 1);
      const Tensor r = normal({1, 1, o, i});
      cases.push_back({"kernel_slice",
                       [=](Graph& g, const std::vector<Var>& in) { return project(g, kernel_slice(in[0], row, col), r); },
                       {normal({o, i, k1, k2})}});
      const Tensor rs = normal({o, i, k1, k2});
      std::vector<Tensor> parts;
      for (std::size_t j = 0; j < k1 * k2; ++j) parts.push_back(normal({1, 1, o, i}));
      cases.push_back({"stack_kernel_slices",
                       [=](Graph& g, const std::vector<Var>& in) {
                         return project(g, stack_kernel_slices(in, k1, k2), rs);
                       },
                       parts});
    }
  }

  double worst = 0.0;
  std::string worst_op;
  std::size_t failed = 0;
  for (const auto& c : cases) {
    const double e = gradcheck(c.fn, c.inputs);
    if (!(e < 1e-4)) ++failed;
    if (!(e <= worst)) {
      worst = e;
      worst_op = c.op;
    }
  }
  return {failed == 0 && cases.size() >= 50,
          fmt("%zu instances over 16 ops, %zu above 1e-4, worst relative error %.2e (%s)", cases.size(), failed, worst,
              worst_op.c_str())};
}

// AC2 ----------------------------------------------------------------------

Outcome ac2() {
  const ModelSpec spec = make_sequential({3, 12, 12}, 10,
                                         {{"c1", LayerKind::conv2d, 3, 16, 3, 3},
                                          {"c2", LayerKind::conv2d, 16, 32, 3, 3},
                                          {"fc", LayerKind::dense, 0, 10}});
  const ParameterSet global = init_params(spec, 1);
  std::size_t checked = 0, bad = 0;
  bool example = false;
  for (double sr : {0.25, 0.5, 0.75, 1.0}) {
    const CompressionPlan plan = derive_plan(spec, sr);
    const ParameterSet sub = compress_model(global, plan, init_conv_params(plan, KernelInit::uniform, 2));
    const TCPlan tc = derive_tc_plan(plan);
    const ParameterSet back = dilate_model(sub, tc, init_tc_params(tc, KernelInit::uniform, 3));
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
      ++checked;
      const auto& gl = global.layers[l];
      const auto& bl = back.layers[l];
      if (back.names[l] != global.names[l] || bl.weight.shape() != gl.weight.shape() ||
          bl.bias.has_value() != gl.bias.has_value() || (gl.bias && bl.bias->shape() != gl.bias->shape()))
        ++bad;
      if (sub.layers[l].weight.shape() != plan.sub_spec().layers[l].weight_shape()) ++bad;
    }
    if (sr == 0.75) {
      const auto& c = plan.layers[1];
      example = c.slice_count == 9 && c.src_slice == Shape{32, 16} && c.k1 == 9 && c.k2 == 5 &&
                sub.layers[1].weight.shape() == Shape{24, 12, 3, 3} && back.layers[1].weight.shape() == Shape{32, 16, 3, 3};
    }
  }
  return {bad == 0 && example,
          fmt("%zu layer round-trips, %zu shape mismatches; (32,16,3,3) -> kernel (9,5) -> (24,12,3,3): %s", checked, bad,
              example ? "yes" : "no")};
}

// AC3 ----------------------------------------------------------------------

Outcome ac3() {
  constexpr double pi = 3.14159265358979323846;
  const double lo = 1e-5, hi = 1e-3;
  const std::size_t t = 4;
  auto eq2 = [&](std::size_t e) {
    return lo + 0.5 * (hi - lo) * (1.0 + std::cos(static_cast<double>(e) / static_cast<double>(t) * pi));
  };
  bool exact = true;
  for (std::size_t e = 0; e <= t; ++e) exact &= cosine_lr(e, t, lo, hi) == eq2(e);
  const bool start = cosine_lr(0, t, lo, hi) == hi;
  const bool end = cosine_lr(t, t, lo, hi) == lo;
  const double mid = cosine_lr(t / 2, t, lo, hi);
  const bool middle = mid == eq2(t / 2) && std::abs(mid - (lo + hi) / 2.0) <= 1e-18;
  return {exact && start && end && middle,
          fmt("lr(0)=%.17g lr(T)=%.17g lr(T/2)=%.17g (expected %.17g); bitwise vs closed form: %s", cosine_lr(0, t, lo, hi),
              cosine_lr(t, t, lo, hi), mid, (lo + hi) / 2.0, exact ? "yes" : "no")};
}

// AC4 / AC5 ----------------------------------------------------------------

struct MnistStudy {
  ModelSpec spec;
  Dataset train, test;
  ParameterSet global;
  double global_accuracy = 0.0;
};

// 8000/2000 split of the 10k subset; the trained model is cached in the
// build tree because AC4 and AC5 share it.
MnistStudy mnist_study() {
  ExperimentConfig cfg;
  const Dataset data = load_dataset(cfg);
  std::vector<std::size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(1);
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::size_t n_train = data.size() * 4 / 5;
  MnistStudy s;
  s.train = data.subset(std::span(perm).first(n_train));
  s.test = data.subset(std::span(perm).subspan(n_train));
  s.spec = build_model_spec("conv:16:5:1,conv:32:5:2,dense", data.sample_shape(), data.class_count);
  const fs::path cache = fs::path(FEDCONV_BINARY_DIR) / "acceptance_mnist_global.fcps";
  bool loaded = false;
  if (fs::exists(cache)) {
    try {
      s.global = load_params(cache, s.spec);
      loaded = true;
    } catch (const Error&) {
    }
  }
  if (!loaded) {
    s.global = init_params(s.spec, 1);
    for (std::size_t e = 0; e < 15; ++e) {
      const double lr = e < 10 ? 0.05 : 0.01;
      s.global = local_train(s.spec, s.global, s.train, {.epochs = 1, .lr = lr, .batch_size = 32, .seed = e});
      progress(fmt("global epoch %zu", e));
    }
    save_params(cache, s.global);
  }
  s.global_accuracy = evaluate(s.spec, s.global, s.test).accuracy;
  progress(fmt("global model test accuracy %.4f", s.global_accuracy));
  return s;
}

double compressed_accuracy(const MnistStudy& s, const Dataset& finetune, const ExperimentConfig& cfg, double sr,
                           std::uint64_t seed) {
  const CompressionPlan plan = derive_plan(s.spec, sr, cfg.kernel_policy());
  ConvParams cp = init_conv_params(plan, cfg.kernel_init, sub_seed(seed, "ac.init"));
  cp = finetune_compression(s.global, plan, cp, finetune, cfg.pipeline_options(),
                            cfg.compress_finetune(sub_seed(seed, "ac.finetune")));
  return evaluate(plan.sub_spec(), compress_model(s.global, plan, cp, cfg.pipeline_options()), s.test).accuracy;
}

Outcome ac4() {
  const MnistStudy s = mnist_study();
  ExperimentConfig cfg;  // full pipeline with default hyperparameters
  cfg.compress_epochs = 20;
  const double sub = compressed_accuracy(s, s.train, cfg, 0.5, 1);
  const double gap = s.global_accuracy - sub;
  return {s.global_accuracy >= 0.97 && gap <= 0.03,
          fmt("global %.4f (need >= 0.97), sr 0.5 sub-model %.4f, gap %.2f points (need <= 3)", s.global_accuracy, sub,
              100.0 * gap)};
}

Outcome ac5() {
  const MnistStudy s = mnist_study();
  std::vector<std::size_t> first(1000);
  std::iota(first.begin(), first.end(), 0);
  const Dataset finetune = s.train.subset(first);

  ExperimentConfig base;
  base.compress_epochs = 20;
  base.residual = base.mlr = base.weight_norm = base.scheduler = false;
  std::vector<ExperimentConfig> ladder{base};
  ladder.push_back(ladder.back());
  ladder.back().residual = true;
  ladder.push_back(ladder.back());
  ladder.back().mlr = true;
  ladder.push_back(ladder.back());
  ladder.back().weight_norm = ladder.back().scheduler = true;
  const char* names[] = {"bare", "+conv1x1/residual", "+mlr", "+weight-norm/scheduler"};

  std::vector<double> med;
  std::string detail;
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    std::vector<double> acc;
    for (std::uint64_t seed : {1, 2, 3}) {
      acc.push_back(compressed_accuracy(s, finetune, ladder[i], 0.5, seed));
      progress(fmt("%s seed %llu: %.4f", names[i], static_cast<unsigned long long>(seed), acc.back()));
    }
    med.push_back(median3(acc));
    detail += fmt("%s%s %.4f [%s]", i ? "; " : "", names[i], med.back(), list(acc).c_str());
  }
  bool ok = med[3] > med[0];
  for (std::size_t i = 1; i < med.size(); ++i) ok &= med[i] >= med[i - 1] - 0.005;
  return {ok, "medians: " + detail};
}

// AC6 / AC7 / AC9 ----------------------------------------------------------

const RoundReport& last(const std::vector<RoundReport>& r) {
  if (r.empty()) throw UsageError("experiment produced no rounds");
  return r.back();
}

Outcome ac6() {
  std::vector<double> gaps, tuned, naive;
  for (std::uint64_t seed : {1, 2, 3}) {
    ExperimentConfig cfg = desk();
    cfg.clients = 10;
    cfg.rounds = 30;
    cfg.seed = seed;
    cfg.aggregation = AggregationMode::tuned;
    tuned.push_back(last(run_experiment(cfg)).global_accuracy);
    cfg.aggregation = AggregationMode::naive;
    naive.push_back(last(run_experiment(cfg)).global_accuracy);
    gaps.push_back(tuned.back() - naive.back());
    progress(fmt("seed %llu: tuned %.4f naive %.4f", static_cast<unsigned long long>(seed), tuned.back(), naive.back()));
  }
  const double g = median3(gaps);
  return {g >= 0.05, fmt("round-30 global accuracy, tuned [%s] naive [%s]; median gap %.2f points (need >= 5)",
                         list(tuned).c_str(), list(naive).c_str(), 100.0 * g)};
}

Outcome ac7() {
  std::vector<double> gaps, ours, base;
  for (std::uint64_t seed : {1, 2, 3}) {
    ExperimentConfig cfg = desk();
    cfg.rounds = 30;
    cfg.seed = seed;
    const Experiment e = setup_experiment(cfg);
    ours.push_back(last(run_experiment(e)).mean_client_accuracy);
    base.push_back(last(fedavg_baseline(e)).mean_client_accuracy);
    gaps.push_back(ours.back() - base.back());
    progress(fmt("seed %llu: fedconv %.4f fedavg %.4f", static_cast<unsigned long long>(seed), ours.back(), base.back()));
  }
  const double g = median3(gaps);
  return {g > 0.0, fmt("round-30 mean client accuracy, fedconv [%s] fedavg [%s]; median gap %.2f points (need > 0)",
                       list(ours).c_str(), list(base).c_str(), 100.0 * g)};
}

Outcome ac9() {
  std::vector<double> gaps, on, off;
  for (std::uint64_t seed : {1, 2, 3}) {
    ExperimentConfig cfg = desk();
    cfg.rounds = 5;
    cfg.seed = seed;
    cfg.pretrain = true;
    on.push_back(last(run_experiment(cfg)).global_accuracy);
    cfg.pretrain = false;
    off.push_back(last(run_experiment(cfg)).global_accuracy);
    gaps.push_back(on.back() - off.back());
    progress(fmt("seed %llu: pretrain %.4f none %.4f", static_cast<unsigned long long>(seed), on.back(), off.back()));
  }
  const double g = median3(gaps);
  return {g >= 0.0, fmt("round-5 global accuracy, pretrained [%s] not [%s]; median gap %.2f points (need >= 0)",
                        list(on).c_str(), list(off).c_str(), 100.0 * g)};
}

// AC8 ----------------------------------------------------------------------

Outcome ac8() {
  const ExperimentConfig cfg = desk();
  const Dataset data = load_dataset(cfg);
  const DataSplits s = split_dataset(data, sub_seed(cfg.seed, "split"));
  const ModelSpec spec = build_model_spec(cfg.model, data.sample_shape(), data.class_count);
  const auto rows = pruning_mi_study(spec, s.client_pool_train, s.server_train, s.server_test, 0.5, cfg, 3);
  double conv = 0, channel = 0, filter = 0;
  std::string detail;
  for (const auto& r : rows) {
    if (r.name == "conv") conv = r.mi;
    if (r.name == "channel") channel = r.mi;
    if (r.name == "filter") filter = r.mi;
    detail += fmt("%s%s MI %.4f bits acc %.4f params %zu", detail.empty() ? "" : "; ", r.name.c_str(), r.mi, r.accuracy,
                  r.parameters);
  }
  return {conv > channel && conv > filter, "ratio 0.5: " + detail};
}

// AC10 ---------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome ac10() {
  const fs::path root = fs::temp_directory_path() / "fedconv_ac10";
  fs::remove_all(root);
  const fs::path config = fs::path(FEDCONV_SOURCE_DIR) / "configs" / "desk.conf";
  const std::size_t rounds = 2;
  for (const char* run : {"a", "b"}) {
    const std::string cmd = std::string("\"") + FEDCONV_CLI + "\" run --config \"" + config.string() + "\" --rounds " +
                            std::to_string(rounds) + " --out \"" + (root / run).string() + "\" > /dev/null";
    const int rc = std::system(cmd.c_str());
    if (rc != 0) return {false, fmt("fedconv run exited with status %d", rc)};
  }
  std::size_t compared = 0, differing = 0;
  for (std::size_t r = 1; r <= rounds; ++r) {
    const fs::path rel = fs::path("round_" + std::to_string(r)) / "report.json";
    ++compared;
    differing += slurp(root / "a" / rel) != slurp(root / "b" / rel);
  }
  ++compared;
  differing += slurp(root / "a" / "metrics.json") != slurp(root / "b" / "metrics.json");
  fs::remove_all(root);
  return {differing == 0, fmt("two CLI runs of desk.conf (%zu rounds): %zu of %zu report files differ", rounds, differing,
                              compared)};
}

// AC11 ---------------------------------------------------------------------

// Independent sample-weighted mean, written out element by element.
ParameterSet direct_fedavg(const std::vector<ClientUpdate>& ups) {
  ParameterSet out = ups.front().params;
  double total = 0.0;
  for (const auto& u : ups) total += static_cast<double>(u.sample_count);
  for (std::size_t l = 0; l < out.size(); ++l) {
    auto mix = [&](auto get) {
      Tensor t = get(ups.front().params.layers[l]);
      for (std::size_t i = 0; i < t.numel(); ++i) {
        double acc = 0.0;
        for (const auto& u : ups) acc += static_cast<double>(u.sample_count) * get(u.params.layers[l])[i];
        t[i] = acc / total;
      }
      return t;
    };
    out.layers[l].weight = mix([](const LayerParams& p) { return p.weight; });
    if (out.layers[l].bias) out.layers[l].bias = mix([](const LayerParams& p) { return *p.bias; });
  }
  return out;
}

Outcome ac11() {
  ExperimentConfig cfg = desk();
  cfg.srs = {1.0};
  cfg.identity_pipelines = true;
  cfg.mlr = false;
  cfg.aggregation = AggregationMode::naive;
  cfg.denorm = Denormalization::per_model;
  cfg.local_epochs = 1;
  const Experiment e = setup_experiment(cfg);
  std::vector<ClientProfile> profiles;
  for (const auto& c : e.clients) profiles.push_back(c.profile());
  FederationState st = init_state(cfg, e.global_spec, profiles);
  pretrain_global(st, e.server.train, cfg.pretrain_epochs, cfg.pretrain_lr, cfg.batch_size);
  double worst = 0.0;
  bool unit_v = true;
  for (int r = 0; r < 3; ++r) {
    std::vector<ClientUpdate> ups;
    const RoundReport rep = run_round(st, e.clients, e.server, cfg, &ups);
    for (const auto& row : rep.v)
      for (double x : row) unit_v &= x == 1.0;
    const ParameterSet ref = direct_fedavg(ups);
    for (std::size_t l = 0; l < ref.size(); ++l) {
      worst = std::max(worst, max_abs_diff(st.global.layers[l].weight, ref.layers[l].weight));
      if (ref.layers[l].bias) worst = std::max(worst, max_abs_diff(*st.global.layers[l].bias, *ref.layers[l].bias));
    }
  }
  return {worst <= 1e-10 && unit_v,
          fmt("%zu clients at sr 1, identity pipelines, v = 1: max |global - FedAvg| over 3 rounds %.3e (need <= 1e-10)",
              e.clients.size(), worst)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<int> only;
  app.add_option("--criterion", only, "run only these criteria (1-11)")->check(CLI::Range(1, 11));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::function<Outcome()>> checks{ac1, ac2, ac3, ac4, ac5, ac6, ac7, ac8, ac9, ac10, ac11};
  if (only.empty())
    for (int i = 1; i <= 11; ++i) only.push_back(i);
  int failures = 0;
  for (int i : only) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = checks[static_cast<std::size_t>(i - 1)]();
    } catch (const std::exception& ex) {
      o = {false, std::string("error: ") + ex.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("AC%d %s: %s (%.1fs)\n", i, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}

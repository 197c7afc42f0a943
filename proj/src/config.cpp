// SPDX-License-Identifier: Apache-2.0
#include "fedconv/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "fedconv/errors.hpp"

#ifndef FEDCONV_DATA_DIR
#define FEDCONV_DATA_DIR "data"
#endif

namespace fedconv {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError("config key '" + key + "': expected " + expected + ", got '" + value + "'");
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a non-negative integer");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(out)) bad_value(key, v, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, v, "true or false");
}

template <class E>
E parse_enum(const std::string& key, const std::string& v, const std::map<std::string, E>& names) {
  const auto it = names.find(v);
  if (it == names.end()) {
    std::string expected;
    for (const auto& [n, _] : names) expected += (expected.empty() ? "" : " | ") + n;
    bad_value(key, v, expected);
  }
  return it->second;
}

template <class E>
std::string enum_name(E value, const std::map<std::string, E>& names) {
  for (const auto& [n, e] : names)
    if (e == value) return n;
  return "?";
}

const std::map<std::string, DataSource> kSources{{"mnist", DataSource::mnist}, {"synthetic", DataSource::synthetic}};
const std::map<std::string, AggregationMode> kAggModes{{"tuned", AggregationMode::tuned},
                                                       {"naive", AggregationMode::naive}};
const std::map<std::string, KernelInit> kInits{{"uniform", KernelInit::uniform}, {"delta", KernelInit::delta}};
const std::map<std::string, Optimizer> kOptimizers{{"sgd", Optimizer::sgd}, {"adam", Optimizer::adam}};
const std::map<std::string, Denormalization> kDenorms{{"per_model", Denormalization::per_model},
                                                      {"mean_record", Denormalization::mean_record}};

std::string fmt_real(double x) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

template <class T>
std::string join(const std::vector<T>& xs, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (const auto& x : xs) out += (out.empty() ? "" : ",") + f(x);
  return out;
}

// One entry per key: how to read it into a config and how to print it.
struct Field {
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> read;
  std::function<std::string(const ExperimentConfig&)> write;
};

template <class M>
Field size_field(M ExperimentConfig::*m) {
  return {[m](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*m = parse_size(k, v); },
          [m](const ExperimentConfig& c) { return std::to_string(c.*m); }};
}
Field real_field(double ExperimentConfig::*m) {
  return {[m](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*m = parse_real(k, v); },
          [m](const ExperimentConfig& c) { return fmt_real(c.*m); }};
}
Field bool_field(bool ExperimentConfig::*m) {
  return {[m](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*m = parse_bool(k, v); },
          [m](const ExperimentConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}
Field string_field(std::string ExperimentConfig::*m) {
  return {[m](ExperimentConfig& c, const std::string&, const std::string& v) { c.*m = v; },
          [m](const ExperimentConfig& c) { return c.*m; }};
}
template <class E>
Field enum_field(E ExperimentConfig::*m, const std::map<std::string, E>& names) {
  return {[m, &names](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*m = parse_enum(k, v, names);
          },
          [m, &names](const ExperimentConfig& c) { return enum_name(c.*m, names); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f{
      {"dataset", enum_field(&ExperimentConfig::dataset, kSources)},
      {"mnist_images", string_field(&ExperimentConfig::mnist_images)},
      {"mnist_labels", string_field(&ExperimentConfig::mnist_labels)},
      {"data_limit", size_field(&ExperimentConfig::data_limit)},
      {"synthetic_classes", size_field(&ExperimentConfig::synthetic_classes)},
      {"synthetic_per_class", size_field(&ExperimentConfig::synthetic_per_class)},
      {"synthetic_shape",
       {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
          Shape s;
          for (const auto& d : split(v, ',')) s.push_back(parse_size(k, d));
          if (s.empty()) bad_value(k, v, "a comma-separated shape");
          c.synthetic_shape = s;
        },
        [](const ExperimentConfig& c) {
          return join<std::size_t>(c.synthetic_shape, [](const std::size_t& d) { return std::to_string(d); });
        }}},
      {"synthetic_separation", real_field(&ExperimentConfig::synthetic_separation)},
      {"model", string_field(&ExperimentConfig::model)},
      {"clients", size_field(&ExperimentConfig::clients)},
      {"srs",
       {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
          c.srs.clear();
          for (const auto& x : split(v, ',')) c.srs.push_back(parse_real(k, x));
        },
        [](const ExperimentConfig& c) { return join<double>(c.srs, fmt_real); }}},
      {"alpha", real_field(&ExperimentConfig::alpha)},
      {"rounds", size_field(&ExperimentConfig::rounds)},
      {"participation", real_field(&ExperimentConfig::participation)},
      {"pretrain", bool_field(&ExperimentConfig::pretrain)},
      {"pretrain_epochs", size_field(&ExperimentConfig::pretrain_epochs)},
      {"pretrain_lr", real_field(&ExperimentConfig::pretrain_lr)},
      {"local_epochs", size_field(&ExperimentConfig::local_epochs)},
      {"local_lr", real_field(&ExperimentConfig::local_lr)},
      {"batch_size", size_field(&ExperimentConfig::batch_size)},
      {"compress_epochs", size_field(&ExperimentConfig::compress_epochs)},
      {"dilate_epochs", size_field(&ExperimentConfig::dilate_epochs)},
      {"scheduler", bool_field(&ExperimentConfig::scheduler)},
      {"t_max", size_field(&ExperimentConfig::t_max)},
      {"lr_min", real_field(&ExperimentConfig::lr_min)},
      {"lr_max", real_field(&ExperimentConfig::lr_max)},
      {"s_p", real_field(&ExperimentConfig::s_p)},
      {"s_n", real_field(&ExperimentConfig::s_n)},
      {"residual", bool_field(&ExperimentConfig::residual)},
      {"mlr", bool_field(&ExperimentConfig::mlr)},
      {"weight_norm", bool_field(&ExperimentConfig::weight_norm)},
      {"stride", size_field(&ExperimentConfig::stride)},
      {"padding", size_field(&ExperimentConfig::padding)},
      {"kernel_init", enum_field(&ExperimentConfig::kernel_init, kInits)},
      {"optimizer", enum_field(&ExperimentConfig::optimizer, kOptimizers)},
      {"identity_pipelines", bool_field(&ExperimentConfig::identity_pipelines)},
      {"aggregation", enum_field(&ExperimentConfig::aggregation, kAggModes)},
      {"agg_epochs", size_field(&ExperimentConfig::agg_epochs)},
      {"agg_lr", real_field(&ExperimentConfig::agg_lr)},
      {"lambda", real_field(&ExperimentConfig::lambda)},
      {"kld_bins", size_field(&ExperimentConfig::kld_bins)},
      {"denorm", enum_field(&ExperimentConfig::denorm, kDenorms)},
      {"seed",
       {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); },
        [](const ExperimentConfig& c) { return std::to_string(c.seed); }}},
      {"checkpoints", bool_field(&ExperimentConfig::checkpoints)},
      {"report_timing", bool_field(&ExperimentConfig::report_timing)},
  };
  return f;
}

}  // namespace

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("config: " + what);
  };
  require(schema_version == kConfigSchemaVersion, "unsupported schema_version " + std::to_string(schema_version));
  require(clients >= 1, "clients must be >= 1");
  require(!srs.empty(), "srs must not be empty");
  for (double sr : srs) require(sr > 0.0 && sr <= 1.0, "every sr must lie in (0, 1]");
  require(alpha > 0.0, "alpha must be > 0");
  require(participation > 0.0 && participation <= 1.0, "participation must lie in (0, 1]");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(t_max >= 1, "t_max must be >= 1");
  require(lr_min >= 0.0 && lr_max >= lr_min, "need 0 <= lr_min <= lr_max");
  require(local_lr >= 0.0 && pretrain_lr >= 0.0 && agg_lr >= 0.0, "learning rates must be >= 0");
  require(stride >= 1, "stride must be >= 1");
  require(lambda >= 0.0, "lambda must be >= 0");
  require(kld_bins >= 2, "kld_bins must be >= 2");
  require(s_p > 0.0 && s_n >= 0.0, "need s_p > 0 and s_n >= 0");
  require(synthetic_separation > 0.0 && synthetic_classes >= 2 && synthetic_per_class >= 1,
          "synthetic data needs >= 2 classes, >= 1 sample per class and separation > 0");
  require(!model.empty(), "model must not be empty");
}

PipelineOptions ExperimentConfig::pipeline_options() const { return {residual, mlr, weight_norm, s_p, s_n}; }

FinetuneOptions ExperimentConfig::compress_finetune(std::uint64_t s) const {
  FinetuneOptions ft;
  ft.epochs = compress_epochs;
  ft.batch_size = batch_size;
  ft.schedule = {t_max, lr_min, lr_max};
  ft.use_schedule = scheduler;
  ft.optimizer = optimizer;
  ft.seed = s;
  return ft;
}

FinetuneOptions ExperimentConfig::dilate_finetune(std::uint64_t s) const {
  FinetuneOptions ft = compress_finetune(s);
  ft.epochs = dilate_epochs;
  return ft;
}

TuneOptions ExperimentConfig::tune_options(std::uint64_t s) const {
  return {lambda, agg_epochs, agg_lr, batch_size, kld_bins, denorm, s};
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig c;
  std::set<std::string> seen;
  bool have_version = false;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("config key '" + key + "' repeated");
    if (key == "schema_version") {
      c.schema_version = static_cast<int>(parse_size(key, value));
      have_version = true;
      continue;
    }
    bool known = false;
    for (const auto& [name, field] : fields()) {
      if (name == key) {
        field.read(c, key, value);
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  if (!have_version) throw ConfigError("config lacks schema_version");
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const ExperimentConfig& config) {
  std::string out = "schema_version = " + std::to_string(config.schema_version) + "\n";
  for (const auto& [name, field] : fields()) out += name + " = " + field.write(config) + "\n";
  return out;
}

ModelSpec build_model_spec(const std::string& model, const Shape& input_shape, std::size_t num_classes) {
  std::vector<LayerSpec> layers;
  const auto entries = split(model, ',');
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto parts = split(entries[i], ':');
    const bool last = i + 1 == entries.size();
    LayerSpec l;
    if (parts[0] == "conv" && parts.size() == 4) {
      l.kind = LayerKind::conv2d;
      l.name = "conv" + std::to_string(i + 1);
      l.out_channels = parse_size("model", parts[1]);
      l.k1 = l.k2 = parse_size("model", parts[2]);
      l.stride = parse_size("model", parts[3]);
      if (last) throw ConfigError("model: the last layer must be dense");
    } else if (parts[0] == "dense" && parts.size() <= 2) {
      l.kind = LayerKind::dense;
      l.name = "fc" + std::to_string(i + 1);
      l.out_channels = last ? num_classes : 0;
      if (parts.size() == 2) {
        const std::size_t out = parse_size("model", parts[1]);
        if (last && out != num_classes) throw ConfigError("model: final dense width must equal the class count");
        l.out_channels = out;
      } else if (!last) {
        throw ConfigError("model: hidden dense layers need a width");
      }
    } else {
      throw ConfigError("model: cannot parse layer '" + entries[i] + "'");
    }
    l.in_channels = i == 0 && l.kind == LayerKind::conv2d ? input_shape.at(0) : 0;
    layers.push_back(l);
  }
  if (layers.empty()) throw ConfigError("model: no layers");
  return make_sequential(input_shape, num_classes, layers);
}

Dataset load_dataset(const ExperimentConfig& config) {
  Dataset d;
  if (config.dataset == DataSource::mnist) {
    std::filesystem::path dir = FEDCONV_DATA_DIR;
    if (const char* env = std::getenv("FEDCONV_DATA_DIR")) dir = env;
    const std::filesystem::path images =
        config.mnist_images.empty() ? dir / "mnist10k-images-idx3-ubyte" : std::filesystem::path(config.mnist_images);
    const std::filesystem::path labels =
        config.mnist_labels.empty() ? dir / "mnist10k-labels-idx1-ubyte" : std::filesystem::path(config.mnist_labels);
    d = load_idx(images, labels);
  } else {
    d = gen_synthetic(config.synthetic_classes, config.synthetic_per_class, config.synthetic_shape,
                      config.synthetic_separation, sub_seed(config.seed, "data"));
  }
  if (config.data_limit > 0 && config.data_limit < d.size()) {
    std::vector<std::size_t> idx(config.data_limit);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    d = d.subset(idx);
  }
  return d;
}

std::uint64_t sub_seed(std::uint64_t seed, std::string_view stage, std::uint64_t a, std::uint64_t b) {
  // splitmix64 over the seed, an FNV-1a hash of the stage name and the indices
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : stage) h = (h ^ static_cast<unsigned char>(ch)) * 0x100000001b3ULL;
  return mix(mix(mix(mix(seed) ^ h) ^ a) ^ b);
}

}  // namespace fedconv

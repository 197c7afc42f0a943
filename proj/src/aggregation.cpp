// SPDX-License-Identifier: Apache-2.0
#include "fedconv/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedconv/errors.hpp"
#include "fedconv/ops.hpp"

namespace fedconv {

namespace {

Range range_of(const Tensor& t) {
  for (double x : t.data()) {
    if (!std::isfinite(x)) throw NumericalError("non-finite parameter value in aggregation input");
  }
  return {t.min(), t.max()};
}

Tensor normalize_tensor(const Tensor& t, const Range& r) {
  Tensor out(t.shape(), 0.5);
  if (r.span() > 0.0) {
    for (std::size_t i = 0; i < t.numel(); ++i) out[i] = (t[i] - r.min) / r.span();
  }
  return out;
}

Tensor denormalize_tensor(const Tensor& t, const Range& r) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) out[i] = r.min + r.span() * t[i];
  return out;
}

void check_inputs(std::span<const ParameterSet> models, const WeightVectors& v, std::span<const double> s) {
  if (models.empty()) throw UsageError("aggregation needs at least one model");
  if (v.size() != models.size() || s.size() != models.size()) {
    throw UsageError("aggregation got " + std::to_string(models.size()) + " models, " + std::to_string(v.size()) +
                     " weight vectors and " + std::to_string(s.size()) + " sample counts");
  }
  const ParameterSet& ref = models[0];
  for (std::size_t j = 0; j < models.size(); ++j) {
    if (!(s[j] > 0.0)) throw UsageError("sample counts must be positive");
    if (v[j].size() != ref.size()) throw UsageError("weight vector length does not match the layer count");
    if (models[j].size() != ref.size()) throw UsageError("models disagree on the layer count");
    for (std::size_t l = 0; l < ref.size(); ++l) {
      if (models[j].names[l] != ref.names[l] || models[j].layers[l].weight.shape() != ref.layers[l].weight.shape() ||
          models[j].layers[l].bias.has_value() != ref.layers[l].bias.has_value() ||
          (ref.layers[l].bias && models[j].layers[l].bias->shape() != ref.layers[l].bias->shape())) {
        throw UsageError("models disagree on layer " + ref.names[l]);
      }
    }
  }
}

std::vector<double> shares(std::span<const double> s) {
  const double total = std::accumulate(s.begin(), s.end(), 0.0);
  std::vector<double> c(s.size());
  for (std::size_t j = 0; j < s.size(); ++j) c[j] = s[j] / total;
  return c;
}

// The aggregate of one tensor is affine in v: W = a + sum_j v_j * b[j].
struct AffineTerms {
  Tensor a;
  std::vector<Tensor> b;
};

AffineTerms tensor_terms(const std::vector<const Tensor*>& normalized, const std::vector<Range>& ranges,
                         const std::vector<double>& c, const std::vector<double>& k, Denormalization denorm) {
  const std::size_t n = normalized.size();
  AffineTerms t;
  double a = 0.0;
  if (denorm == Denormalization::per_model) {
    for (std::size_t j = 0; j < n; ++j) a += c[j] * k[j] * ranges[j].min;
    for (std::size_t j = 0; j < n; ++j) {
      Tensor b(normalized[j]->shape());
      const double f = c[j] * k[j] * ranges[j].span();
      for (std::size_t i = 0; i < b.numel(); ++i) b[i] = f * (*normalized[j])[i];
      t.b.push_back(std::move(b));
    }
  } else {
    double mean_span = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      a += c[j] * ranges[j].min;
      mean_span += c[j] * ranges[j].span();
    }
    for (std::size_t j = 0; j < n; ++j) {
      Tensor b(normalized[j]->shape());
      const double f = mean_span * c[j] * k[j];
      for (std::size_t i = 0; i < b.numel(); ++i) b[i] = f * (*normalized[j])[i];
      t.b.push_back(std::move(b));
    }
  }
  t.a = Tensor(normalized[0]->shape(), a);
  return t;
}

struct LayerTerms {
  AffineTerms weight;
  std::optional<AffineTerms> bias;
};

std::vector<LayerTerms> build_terms(std::span<const ParameterSet> models, std::span<const double> s,
                                    std::vector<double> factors, Denormalization denorm) {
  const NormalizedModels nm = normalize_params(models);
  const auto c = shares(s);
  if (factors.empty()) factors.assign(models.size(), 1.0);
  if (factors.size() != models.size()) throw UsageError("one model factor per model required");
  std::vector<LayerTerms> out;
  for (std::size_t l = 0; l < models[0].size(); ++l) {
    std::vector<const Tensor*> w;
    std::vector<Range> wr;
    for (std::size_t j = 0; j < models.size(); ++j) {
      w.push_back(&nm.models[j].layers[l].weight);
      wr.push_back(nm.records[j][l].weight);
    }
    LayerTerms lt{tensor_terms(w, wr, c, factors, denorm), std::nullopt};
    if (models[0].layers[l].bias) {
      std::vector<const Tensor*> b;
      std::vector<Range> br;
      for (std::size_t j = 0; j < models.size(); ++j) {
        b.push_back(&*nm.models[j].layers[l].bias);
        br.push_back(*nm.records[j][l].bias);
      }
      lt.bias = tensor_terms(b, br, c, factors, denorm);
    }
    out.push_back(std::move(lt));
  }
  return out;
}

Tensor evaluate_terms(const AffineTerms& t, const WeightVectors& v, std::size_t layer) {
  Tensor out = t.a;
  for (std::size_t j = 0; j < t.b.size(); ++j) {
    const double vj = v[j][layer];
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += vj * t.b[j][i];
  }
  return out;
}

ParameterSet assemble(const ParameterSet& like, const std::vector<LayerTerms>& terms, const WeightVectors& v) {
  ParameterSet out;
  out.names = like.names;
  for (std::size_t l = 0; l < terms.size(); ++l) {
    LayerParams lp{evaluate_terms(terms[l].weight, v, l), std::nullopt};
    if (terms[l].bias) lp.bias = evaluate_terms(*terms[l].bias, v, l);
    out.layers.push_back(std::move(lp));
  }
  return out;
}

std::vector<double> layer_values(const LayerParams& l) {
  std::vector<double> out(l.weight.data().begin(), l.weight.data().end());
  if (l.bias) out.insert(out.end(), l.bias->data().begin(), l.bias->data().end());
  return out;
}

std::vector<double> histogram(const std::vector<double>& x, double lo, double hi, std::size_t bins) {
  std::vector<double> h(bins, 0.0);
  const double width = hi - lo;
  for (double v : x) {
    std::size_t b = 0;
    if (width > 0.0) b = std::min(bins - 1, static_cast<std::size_t>((v - lo) / width * static_cast<double>(bins)));
    h[b] += 1.0;
  }
  constexpr double eps = 1e-8;
  const double n = static_cast<double>(x.size());
  double total = 0.0;
  for (auto& v : h) total += (v = v / n + eps);
  for (auto& v : h) v /= total;
  return h;
}

}  // namespace

WeightVectors unit_weights(std::size_t models, std::size_t layers) {
  return WeightVectors(models, std::vector<double>(layers, 1.0));
}

NormalizedModels normalize_params(std::span<const ParameterSet> models) {
  if (models.empty()) throw UsageError("normalize_params needs at least one model");
  NormalizedModels out;
  for (const auto& m : models) {
    ParameterSet nm;
    nm.names = m.names;
    std::vector<LayerRange> ranges;
    for (const auto& l : m.layers) {
      LayerRange r{range_of(l.weight), std::nullopt};
      LayerParams lp{normalize_tensor(l.weight, r.weight), std::nullopt};
      if (l.bias) {
        r.bias = range_of(*l.bias);
        lp.bias = normalize_tensor(*l.bias, *r.bias);
      }
      nm.layers.push_back(std::move(lp));
      ranges.push_back(r);
    }
    out.models.push_back(std::move(nm));
    out.records.push_back(std::move(ranges));
  }
  return out;
}

ParameterSet denormalize(const ParameterSet& normalized, const std::vector<LayerRange>& ranges) {
  if (ranges.size() != normalized.size()) throw UsageError("range record does not match the model");
  ParameterSet out;
  out.names = normalized.names;
  for (std::size_t l = 0; l < normalized.size(); ++l) {
    const auto& src = normalized.layers[l];
    LayerParams lp{denormalize_tensor(src.weight, ranges[l].weight), std::nullopt};
    if (src.bias) {
      if (!ranges[l].bias) throw UsageError("range record lacks a bias range for " + normalized.names[l]);
      lp.bias = denormalize_tensor(*src.bias, *ranges[l].bias);
    }
    out.layers.push_back(std::move(lp));
  }
  return out;
}

ParameterSet combine_normalized(std::span<const ParameterSet> normalized, const WeightVectors& v,
                                std::span<const double> s) {
  check_inputs(normalized, v, s);
  const double total = std::accumulate(s.begin(), s.end(), 0.0);
  ParameterSet out = normalized[0];
  for (std::size_t l = 0; l < out.size(); ++l) {
    auto combine = [&](auto get) {
      Tensor& dst = get(out);
      dst = Tensor(dst.shape());
      for (std::size_t j = 0; j < normalized.size(); ++j) {
        const Tensor& src = get(const_cast<ParameterSet&>(normalized[j]));
        const double f = v[j][l] * s[j];
        for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += f * src[i];
      }
      for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] /= total;
    };
    combine([l](ParameterSet& p) -> Tensor& { return p.layers[l].weight; });
    if (out.layers[l].bias) combine([l](ParameterSet& p) -> Tensor& { return *p.layers[l].bias; });
  }
  return out;
}

ParameterSet weighted_aggregate(std::span<const ParameterSet> models, const WeightVectors& v,
                                std::span<const double> s, const AggregateOptions& options) {
  check_inputs(models, v, s);
  return assemble(models[0], build_terms(models, s, options.model_factors, options.denorm), v);
}

ParameterSet naive_average(std::span<const ParameterSet> models, std::span<const double> s, Denormalization denorm) {
  return weighted_aggregate(models, unit_weights(models.size(), models.empty() ? 0 : models[0].size()), s,
                            {denorm, {}});
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw UsageError("KL divergence needs two equal-length distributions");
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) d += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(0.0, d);
}

double kld(const ParameterSet& model, const ParameterSet& global_prev, std::size_t bins) {
  if (bins < 2) throw UsageError("KLD needs at least 2 bins");
  if (model.size() != global_prev.size()) throw UsageError("KLD inputs disagree on the layer count");
  double total = 0.0;
  for (std::size_t l = 0; l < model.size(); ++l) {
    const auto q_vals = layer_values(model.layers[l]);
    const auto p_vals = layer_values(global_prev.layers[l]);
    if (q_vals.empty() || p_vals.empty()) throw UsageError("KLD of an empty layer");
    const auto [qlo, qhi] = std::minmax_element(q_vals.begin(), q_vals.end());
    const auto [plo, phi] = std::minmax_element(p_vals.begin(), p_vals.end());
    const double lo = std::min(*qlo, *plo), hi = std::max(*qhi, *phi);
    total += kl_divergence(histogram(p_vals, lo, hi, bins), histogram(q_vals, lo, hi, bins));
  }
  return total;
}

std::vector<double> kld_factors(std::span<const double> klds, std::span<const double> s, double lambda) {
  if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
  if (klds.size() != s.size()) throw UsageError("one KLD per model required");
  const auto c = shares(s);
  std::vector<double> k(klds.size());
  double norm = 0.0;
  for (std::size_t j = 0; j < k.size(); ++j) {
    k[j] = std::exp(-lambda * klds[j]);
    norm += c[j] * k[j];
  }
  for (auto& x : k) x /= norm;
  return k;
}

AggregateOptions TuneResult::aggregate_options() const {
  return {denorm, factors};
}

TuneResult tune_weight_vectors(const ModelSpec& spec, std::span<const ParameterSet> models,
                               std::span<const double> s, const ParameterSet& global_prev, const Dataset& server_data,
                               const TuneOptions& options) {
  if (server_data.empty()) throw UsageError("weight tuning needs server data");
  if (options.lambda < 0.0) throw ConfigError("lambda must be non-negative");
  const std::size_t n = models.size();
  const std::size_t layers = models.empty() ? 0 : models[0].size();
  WeightVectors v = unit_weights(n, layers);
  check_inputs(models, v, s);
  for (const auto& m : models) m.validate(spec);

  TuneResult r;
  r.denorm = options.denorm;
  for (const auto& m : models) r.klds.push_back(kld(m, global_prev, options.kld_bins));
  r.factors = kld_factors(r.klds, s, options.lambda);
  const double reg = options.lambda * std::accumulate(r.klds.begin(), r.klds.end(), 0.0);
  const auto terms = build_terms(models, s, r.factors, options.denorm);

  auto full_loss = [&](const WeightVectors& w) { return evaluate(spec, assemble(models[0], terms, w), server_data).loss + reg; };
  r.initial_loss = full_loss(v);
  r.v = v;
  r.final_loss = r.initial_loss;

  std::mt19937_64 rng(options.seed);
  for (std::size_t e = 0; e < options.epochs; ++e) {
    for (const auto& idx : make_batches(server_data.size(), options.batch_size, &rng)) {
      Graph g;
      std::vector<std::vector<Var>> vv(n);
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t l = 0; l < layers; ++l) vv[j].push_back(g.leaf(Tensor::scalar(v[j][l]), true));
      auto build = [&](const AffineTerms& t, std::size_t l) {
        Var acc = g.constant(t.a);
        for (std::size_t j = 0; j < n; ++j) acc = add(acc, scale_by(g.constant(t.b[j]), vv[j][l]));
        return acc;
      };
      std::vector<LayerVars> lv(layers);
      for (std::size_t l = 0; l < layers; ++l) {
        lv[l].weight = build(terms[l].weight, l);
        if (terms[l].bias) lv[l].bias = build(*terms[l].bias, l);
      }
      const auto labels = server_data.batch_labels(idx);
      auto loss = cross_entropy(forward(spec, lv, g.constant(server_data.batch(idx))), labels);
      const auto grads = g.backward(loss);
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t l = 0; l < layers; ++l) v[j][l] -= options.lr * grads.at(vv[j][l])[0];
    }
    const double loss = full_loss(v);
    if (loss < r.final_loss) {
      r.final_loss = loss;
      r.v = v;
    }
  }
  for (const auto& row : r.v)
    for (double x : row)
      if (!std::isfinite(x)) throw NumericalError("weight tuning diverged");
  return r;
}

}  // namespace fedconv

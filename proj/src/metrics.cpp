// SPDX-License-Identifier: Apache-2.0
#include "fedconv/metrics.hpp"

#include <charconv>
#include <fstream>
#include <json.hpp>

#include "fedconv/errors.hpp"

namespace fedconv {

namespace {

using nlohmann::ordered_json;

ordered_json to_json(const RoundReport& r) {
  ordered_json j;
  j["round"] = r.round;
  j["global_accuracy"] = r.global_accuracy;
  j["global_loss"] = r.global_loss;
  j["mean_client_accuracy"] = r.mean_client_accuracy;
  j["agg_initial_loss"] = r.agg_initial_loss;
  j["agg_final_loss"] = r.agg_final_loss;
  ordered_json ids = ordered_json::array(), srs = ordered_json::array(), counts = ordered_json::array(),
               accs = ordered_json::array();
  for (const auto& c : r.clients) {
    ids.push_back(c.client_id);
    srs.push_back(c.sr);
    counts.push_back(c.sample_count);
    accs.push_back(c.accuracy ? ordered_json(*c.accuracy) : ordered_json(nullptr));
  }
  j["client_ids"] = ids;
  j["client_srs"] = srs;
  j["client_samples"] = counts;
  j["client_accuracy"] = accs;
  j["v"] = r.v;
  j["klds"] = r.klds;
  if (!r.timing.empty()) j["timing"] = r.timing;
  return j;
}

std::string fmt(double x) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

}  // namespace

std::string report_to_json(const RoundReport& report) { return to_json(report).dump(); }

RoundReport report_from_json(const std::string& text) {
  try {
    const auto j = ordered_json::parse(text);
    RoundReport r;
    r.round = j.at("round").get<std::size_t>();
    r.global_accuracy = j.at("global_accuracy").get<double>();
    r.global_loss = j.at("global_loss").get<double>();
    r.mean_client_accuracy = j.at("mean_client_accuracy").get<double>();
    r.agg_initial_loss = j.at("agg_initial_loss").get<double>();
    r.agg_final_loss = j.at("agg_final_loss").get<double>();
    const auto& ids = j.at("client_ids");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      ClientResult c;
      c.client_id = ids[i].get<std::size_t>();
      c.sr = j.at("client_srs")[i].get<double>();
      c.sample_count = j.at("client_samples")[i].get<std::size_t>();
      const auto& a = j.at("client_accuracy")[i];
      if (!a.is_null()) c.accuracy = a.get<double>();
      r.clients.push_back(c);
    }
    r.v = j.at("v").get<WeightVectors>();
    r.klds = j.at("klds").get<std::vector<double>>();
    if (j.contains("timing")) r.timing = j.at("timing").get<std::map<std::string, double>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
}

void emit_metrics(std::span<const RoundReport> reports, const std::filesystem::path& path, MetricsFormat format) {
  if (reports.empty()) throw UsageError("emit_metrics needs at least one report");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write metrics to " + path.string());
  if (format == MetricsFormat::json) {
    ordered_json arr = ordered_json::array();
    for (const auto& r : reports) arr.push_back(to_json(r));
    out << arr.dump(1) << "\n";
  } else {
    for (std::size_t i = 0; i < kMetricsCsvHeader.size(); ++i) out << (i ? "," : "") << kMetricsCsvHeader[i];
    out << "\n";
    for (const auto& r : reports) {
      out << r.round << "," << fmt(r.global_accuracy) << "," << fmt(r.global_loss) << ","
          << fmt(r.mean_client_accuracy) << "," << fmt(r.agg_initial_loss) << "," << fmt(r.agg_final_loss) << ","
          << r.clients.size() << "\n";
    }
  }
  if (!out) throw IoError("failed writing metrics to " + path.string());
}

}  // namespace fedconv

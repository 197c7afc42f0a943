// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedconv/federation.hpp"

namespace fedconv {

enum class MetricsFormat { json, csv };

/// Column order of the CSV form.
inline const std::vector<std::string> kMetricsCsvHeader{
    "round", "global_accuracy", "global_loss", "mean_client_accuracy", "agg_initial_loss", "agg_final_loss",
    "clients"};

/// One flat JSON object per report. Reals are written with the shortest
/// exact representation, so parsing recovers them bit for bit.
std::string report_to_json(const RoundReport& report);
RoundReport report_from_json(const std::string& text);

/// JSON: an array of report objects. CSV: kMetricsCsvHeader then one line
/// per round. Throws UsageError on an empty list, IoError when unwritable.
void emit_metrics(std::span<const RoundReport> reports, const std::filesystem::path& path, MetricsFormat format);

}  // namespace fedconv

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slca/evalmetrics.hpp"

namespace slca {

// Mean and standard deviation of the headline metrics over seeds. Sample
// standard deviation (n - 1); zero for a single seed.
struct Aggregate {
  std::string mode;
  std::string scenario;
  std::string config_fingerprint;
  std::size_t total_tasks = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> last_values;  // per seed, in seeds order
  std::vector<double> inc_values;
  double last_mean = 0.0;
  double last_std = 0.0;
  double inc_mean = 0.0;
  double inc_std = 0.0;
};

// Per-seed fingerprints take the form "<config-hash>-<run-hash>"; this
// strips the per-run half so reports of one configuration compare equal.
std::string fingerprint_config_part(const std::string& fingerprint);

// Refuses an empty set, partial runs, and any mismatch in mode, scenario,
// task count, or config-half fingerprint (runs from different
// configurations must never be pooled).
Aggregate aggregate_reports(const std::vector<RunReport>& runs);

std::string report_json(const RunReport& report);
std::string aggregate_json(const Aggregate& agg);
Aggregate parse_aggregate_json(const std::string& text);

// Accuracy matrix as CSV: header "stage,task_1..task_T", one row per
// completed stage, cells beyond the stage left empty.
std::string acc_matrix_csv(const RunReport& report);

// Plain-text table of Last/Inc over seeds. Content is a pure function of
// the aggregate, so reruns are byte-identical.
std::string render_summary(const Aggregate& agg);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace slca

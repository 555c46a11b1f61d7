#include "slca/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "slca/errors.hpp"

namespace slca {

namespace {

using nlohmann::json;

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  sd = 0.0;
  if (v.size() < 2) return;
  double sq = 0.0;
  for (double x : v) sq += (x - mean) * (x - mean);
  sd = std::sqrt(sq / static_cast<double>(v.size() - 1));
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string padded(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace

std::string fingerprint_config_part(const std::string& fingerprint) {
  const std::size_t dash = fingerprint.find('-');
  return dash == std::string::npos ? fingerprint
                                   : fingerprint.substr(0, dash);
}

Aggregate aggregate_reports(const std::vector<RunReport>& runs) {
  if (runs.empty())
    throw ContractViolation("aggregate_reports: no runs");
  const RunReport& first = runs.front();
  Aggregate agg;
  agg.mode = first.mode;
  agg.scenario = first.scenario;
  agg.config_fingerprint = fingerprint_config_part(first.config_fingerprint);
  agg.total_tasks = first.total_tasks;
  for (const RunReport& r : runs) {
    if (!r.error.empty())
      throw ContractViolation("aggregate_reports: seed " +
                              std::to_string(r.seed) +
                              " is a partial run: " + r.error);
    if (r.mode != agg.mode || r.scenario != agg.scenario ||
        r.total_tasks != agg.total_tasks)
      throw ContractViolation("aggregate_reports: seed " +
                              std::to_string(r.seed) +
                              " ran a different experiment");
    if (fingerprint_config_part(r.config_fingerprint) !=
        agg.config_fingerprint)
      throw ContractViolation("aggregate_reports: fingerprint mismatch (" +
                              r.config_fingerprint + " vs " +
                              agg.config_fingerprint + ")");
    agg.seeds.push_back(r.seed);
    agg.last_values.push_back(r.last_acc);
    agg.inc_values.push_back(r.inc_acc);
  }
  mean_std(agg.last_values, agg.last_mean, agg.last_std);
  mean_std(agg.inc_values, agg.inc_mean, agg.inc_std);
  return agg;
}

std::string report_json(const RunReport& r) {
  json j;
  j["mode"] = r.mode;
  j["scenario"] = r.scenario;
  j["seed"] = r.seed;
  j["config_fingerprint"] = r.config_fingerprint;
  j["stages_completed"] = r.stages_completed;
  j["total_tasks"] = r.total_tasks;
  j["acc_matrix"] = r.acc_matrix;
  j["stage_seen_acc"] = r.stage_seen_acc;
  j["stage_raw_acc"] = r.stage_raw_acc;
  j["last_acc"] = r.last_acc;
  j["inc_acc"] = r.inc_acc;
  j["backbone_intact_through_alignment"] =
      r.backbone_intact_through_alignment;
  j["task_epoch_loss"] = r.task_epoch_loss;
  j["error"] = r.error;
  return j.dump(2) + "\n";
}

std::string aggregate_json(const Aggregate& a) {
  json j;
  j["mode"] = a.mode;
  j["scenario"] = a.scenario;
  j["config_fingerprint"] = a.config_fingerprint;
  j["total_tasks"] = a.total_tasks;
  j["seeds"] = a.seeds;
  j["last_values"] = a.last_values;
  j["inc_values"] = a.inc_values;
  j["last_mean"] = a.last_mean;
  j["last_std"] = a.last_std;
  j["inc_mean"] = a.inc_mean;
  j["inc_std"] = a.inc_std;
  return j.dump(2) + "\n";
}

Aggregate parse_aggregate_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("aggregate: ") + e.what());
  }
  try {
    Aggregate a;
    a.mode = j.at("mode").get<std::string>();
    a.scenario = j.at("scenario").get<std::string>();
    a.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    a.total_tasks = j.at("total_tasks").get<std::size_t>();
    a.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    a.last_values = j.at("last_values").get<std::vector<double>>();
    a.inc_values = j.at("inc_values").get<std::vector<double>>();
    a.last_mean = j.at("last_mean").get<double>();
    a.last_std = j.at("last_std").get<double>();
    a.inc_mean = j.at("inc_mean").get<double>();
    a.inc_std = j.at("inc_std").get<double>();
    return a;
  } catch (const json::exception& e) {
    throw ParseError(std::string("aggregate: ") + e.what());
  }
}

std::string acc_matrix_csv(const RunReport& r) {
  std::ostringstream out;
  out << "stage";
  for (std::size_t t = 1; t <= r.total_tasks; ++t) out << ",task_" << t;
  out << "\n";
  for (std::size_t s = 0; s < r.acc_matrix.size(); ++s) {
    out << (s + 1);
    for (std::size_t t = 0; t < r.total_tasks; ++t) {
      out << ",";
      if (t < r.acc_matrix[s].size()) out << fixed(r.acc_matrix[s][t], 6);
    }
    out << "\n";
  }
  return out.str();
}

std::string render_summary(const Aggregate& a) {
  std::ostringstream out;
  out << "mode: " << a.mode << "  scenario: " << a.scenario
      << "  tasks: " << a.total_tasks << "  seeds: " << a.seeds.size()
      << "\n";
  out << "fingerprint: " << a.config_fingerprint << "\n\n";
  out << padded("seed", 12) << padded("Last-Acc (%)", 15) << "Inc-Acc (%)\n";
  for (std::size_t i = 0; i < a.seeds.size(); ++i)
    out << padded(std::to_string(a.seeds[i]), 12)
        << padded(fixed(100.0 * a.last_values[i], 2), 15)
        << fixed(100.0 * a.inc_values[i], 2) << "\n";
  out << "\nLast-Acc: " << fixed(100.0 * a.last_mean, 2) << " +/- "
      << fixed(100.0 * a.last_std, 2) << "\n";
  out << "Inc-Acc:  " << fixed(100.0 * a.inc_mean, 2) << " +/- "
      << fixed(100.0 * a.inc_std, 2) << "\n";
  return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractViolation("cannot open for writing: " + path);
  out << content;
  if (!out) throw ContractViolation("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractViolation("cannot open: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace slca

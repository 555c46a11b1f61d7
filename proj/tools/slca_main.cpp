#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "slca/config.hpp"
#include "slca/engine.hpp"
#include "slca/errors.hpp"
#include "slca/evalmetrics.hpp"
#include "slca/report.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitBadConfig = 2;

int cmd_run(const std::string& config_path) {
  const slca::ExperimentConfig cfg = slca::load_config(config_path);
  const slca::ModeSpec mode = slca::config_mode(cfg);
  const slca::TaskStream stream = slca::build_stream(cfg);
  std::filesystem::create_directories(cfg.output_dir);

  std::vector<slca::RunReport> reports;
  bool failed = false;
  for (const std::uint64_t seed : cfg.seeds) {
    std::string ckpt_dir;
    if (cfg.save_checkpoints)
      ckpt_dir = cfg.output_dir + "/checkpoints_seed" + std::to_string(seed);
    const slca::RunConfig rc = slca::to_run_config(cfg, seed, ckpt_dir);
    slca::RunOutcome out = slca::run_sequence(rc, mode, stream);

    const std::string stem = cfg.output_dir + "/report_seed" +
                             std::to_string(seed);
    slca::write_text_file(stem + ".json", slca::report_json(out.report));
    slca::write_text_file(cfg.output_dir + "/acc_matrix_seed" +
                              std::to_string(seed) + ".csv",
                          slca::acc_matrix_csv(out.report));
    if (out.report.error.empty()) {
      std::printf("seed %llu: Last-Acc %.4f  Inc-Acc %.4f\n",
                  static_cast<unsigned long long>(seed), out.report.last_acc,
                  out.report.inc_acc);
    } else {
      std::fprintf(stderr,
                   "seed %llu failed after %zu stage(s): %s\n",
                   static_cast<unsigned long long>(seed),
                   out.report.stages_completed, out.report.error.c_str());
      failed = true;
    }
    reports.push_back(std::move(out.report));
  }
  if (failed) {
    std::fprintf(stderr, "partial reports written to %s\n",
                 cfg.output_dir.c_str());
    return kExitRuntime;
  }

  const slca::Aggregate agg = slca::aggregate_reports(reports);
  slca::write_text_file(cfg.output_dir + "/aggregate.json",
                        slca::aggregate_json(agg));
  const std::string summary = slca::render_summary(agg);
  slca::write_text_file(cfg.output_dir + "/summary.txt", summary);
  std::printf("\n%s", summary.c_str());
  return 0;
}

// Loads every checkpoint up front so a missing or corrupt file aborts the
// command before any output exists.
std::vector<slca::Model> load_checkpoints(
    const std::vector<std::string>& paths, std::size_t input_dim) {
  std::vector<slca::Model> models;
  for (const std::string& p : paths) {
    if (!std::filesystem::exists(p))
      throw slca::ContractViolation("checkpoint not found: " + p);
    models.push_back(slca::load_checkpoint(p));
    if (models.back().input_dim() != input_dim)
      throw slca::ContractViolation(
          "checkpoint " + p + " expects input width " +
          std::to_string(models.back().input_dim()) +
          " but the stream provides " + std::to_string(input_dim));
  }
  return models;
}

slca::Dataset concat_datasets(const std::vector<slca::Task>& tasks,
                              bool train) {
  slca::Dataset out;
  std::vector<slca::Tensor> inputs;
  for (const slca::Task& t : tasks) {
    const slca::Dataset& d = train ? t.train : t.test;
    inputs.push_back(d.inputs);
    out.labels.insert(out.labels.end(), d.labels.begin(), d.labels.end());
  }
  out.inputs = slca::concat_rows(inputs);
  return out;
}

int cmd_probe(const std::string& config_path,
              const std::vector<std::string>& checkpoints,
              const std::string& out_path, std::uint64_t probe_seed) {
  const slca::ExperimentConfig cfg = slca::load_config(config_path);
  const slca::TaskStream stream = slca::build_stream(cfg);
  const std::vector<slca::Model> models =
      load_checkpoints(checkpoints, cfg.layers.front());

  const slca::Dataset train = concat_datasets(stream.tasks, true);
  const slca::Dataset test = concat_datasets(stream.tasks, false);
  const slca::ProbeConfig pcfg;

  std::string csv = "stage,checkpoint,probe_acc\n";
  for (std::size_t i = 0; i < models.size(); ++i) {
    slca::RngState rng{probe_seed, 0};
    const double acc = slca::linear_probe(models[i], train, test, pcfg, rng);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", acc);
    csv += std::to_string(i + 1) + "," + checkpoints[i] + "," + buf + "\n";
    std::printf("stage %zu: probe accuracy %.4f (%s)\n", i + 1, acc,
                checkpoints[i].c_str());
  }
  std::filesystem::create_directories(cfg.output_dir);
  const std::string target =
      out_path.empty() ? cfg.output_dir + "/probe.csv" : out_path;
  slca::write_text_file(target, csv);
  std::printf("wrote %s\n", target.c_str());
  return 0;
}

int cmd_cka(const std::string& config_path,
            const std::vector<std::string>& checkpoints,
            const std::string& out_path) {
  const slca::ExperimentConfig cfg = slca::load_config(config_path);
  const slca::TaskStream stream = slca::build_stream(cfg);
  const std::vector<slca::Model> models =
      load_checkpoints(checkpoints, cfg.layers.front());
  if (models.size() < 2)
    throw slca::ContractViolation("cka needs at least two checkpoints");

  // One shared evaluation batch: every checkpoint sees identical inputs.
  const slca::Dataset batch = concat_datasets(stream.tasks, false);
  std::vector<slca::Tensor> feats;
  {
    slca::NoGradGuard ng;
    for (const slca::Model& m : models)
      feats.push_back(m.forward_features(batch.inputs));
  }

  std::string csv = "a,b,checkpoint_a,checkpoint_b,cka\n";
  for (std::size_t i = 0; i < models.size(); ++i)
    for (std::size_t j = i + 1; j < models.size(); ++j) {
      const double v = slca::cka(feats[i], feats[j]);
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.6f", v);
      csv += std::to_string(i + 1) + "," + std::to_string(j + 1) + "," +
             checkpoints[i] + "," + checkpoints[j] + "," + buf + "\n";
      std::printf("cka(%zu, %zu) = %.4f\n", i + 1, j + 1, v);
    }
  std::filesystem::create_directories(cfg.output_dir);
  const std::string target =
      out_path.empty() ? cfg.output_dir + "/cka.csv" : out_path;
  slca::write_text_file(target, csv);
  std::printf("wrote %s\n", target.c_str());
  return 0;
}

int cmd_report(const std::string& path) {
  std::string target = path;
  if (std::filesystem::is_directory(target)) target += "/aggregate.json";
  const slca::Aggregate agg =
      slca::parse_aggregate_json(slca::read_text_file(target));
  std::printf("%s", slca::render_summary(agg).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Continual-learning benchmark harness: sequential fine-tuning with "
      "decoupled rates, post-hoc classifier alignment from stored feature "
      "statistics, and representation probes"};
  app.require_subcommand(1);

  std::string config_path, out_path, report_path;
  std::vector<std::string> checkpoints;
  std::uint64_t probe_seed = 0;

  CLI::App* run = app.add_subcommand(
      "run", "Run every seed of an experiment config; write per-seed "
             "reports, accuracy matrices, and the aggregate");
  run->add_option("config", config_path, "experiment config (JSON)")
      ->required();

  CLI::App* probe = app.add_subcommand(
      "probe", "Linear-probe accuracy of each checkpoint on the full "
               "stream (joint head on frozen features)");
  probe->add_option("config", config_path, "experiment config (JSON)")
      ->required();
  probe->add_option("checkpoints", checkpoints, "stage checkpoints, in order")
      ->required()
      ->expected(-1);
  probe->add_option("--out", out_path, "output CSV (default: <output_dir>/probe.csv)");
  probe->add_option("--seed", probe_seed, "probe head init/shuffle seed");

  CLI::App* ckacmd = app.add_subcommand(
      "cka", "Pairwise representation similarity of checkpoints on a "
             "shared evaluation batch");
  ckacmd->add_option("config", config_path, "experiment config (JSON)")
      ->required();
  ckacmd->add_option("checkpoints", checkpoints, "two or more checkpoints")
      ->required()
      ->expected(-1);
  ckacmd->add_option("--out", out_path, "output CSV (default: <output_dir>/cka.csv)");

  CLI::App* rep = app.add_subcommand(
      "report", "Pretty-print an aggregate.json (or the one inside an "
                "output directory)");
  rep->add_option("path", report_path, "aggregate.json or output directory")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path);
    if (*probe) return cmd_probe(config_path, checkpoints, out_path,
                                 probe_seed);
    if (*ckacmd) return cmd_cka(config_path, checkpoints, out_path);
    if (*rep) return cmd_report(report_path);
  } catch (const slca::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitBadConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slca/data.hpp"
#include "slca/engine.hpp"

namespace slca {

struct StreamSpec {
  enum class Kind { kSynthetic, kManifest };
  Kind kind = Kind::kSynthetic;
  // Synthetic streams.
  std::size_t classes = 20;
  std::size_t input_dim = 24;
  std::size_t tasks = 10;
  std::size_t clusters_per_class = 1;
  double separation = 3.0;
  double mean_shift = 0.0;
  std::size_t train_per_class = 50;
  std::size_t test_per_class = 50;
  std::size_t domains = 2;      // domain-incremental synthetic streams only
  double domain_shift = 2.0;
  std::uint64_t stream_seed = 7;
  // Manifest streams.
  std::string manifest;
};

// Warm-up data and schedule. The synthetic generator fields apply only to
// synthetic streams (manifest streams carry their own warm-up file); class
// ids start right after the downstream classes, so the warm-up set is
// always disjoint from the stream.
struct PretrainSpec {
  bool enabled = false;
  std::size_t classes = 10;
  std::size_t train_per_class = 100;
  double separation = 3.0;
  double mean_shift = 0.0;
  std::uint64_t data_seed = 99;
  std::size_t epochs = 30;
  double lr = 0.01;
  std::size_t batch_size = 32;
  double momentum = 0.9;
};

// One experiment: a stream, an ablation mode, and every schedule knob.
// Parsing is strict: unknown keys anywhere are rejected, every field is
// validated before any compute.
struct ExperimentConfig {
  std::string output_dir;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string mode = "sl+sce+ca+ln";
  Scenario scenario = Scenario::kClassIncremental;
  StreamSpec stream;
  PretrainSpec pretrain;
  std::vector<std::size_t> layers{24, 48, 32};
  Activation activation = Activation::kGelu;
  TrainConfig optim;
  Rates rates;
  SceConfig loss;
  AlignConfig align;
  std::size_t lora_rank = 4;
  LoraInit lora_init = LoraInit::kSvd;
  CovVariant covariance = CovVariant::kFull;
  double stats_gamma = 0.9;
  bool save_checkpoints = false;
};

ExperimentConfig parse_config_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Fully resolved config (defaults filled in) with sorted keys; the same
// experiment always canonicalizes to the same bytes regardless of input
// formatting or key order.
std::string canonical_config_json(const ExperimentConfig& cfg);

// "<config-hash>-<run-hash>": the first half identifies the experiment, the
// second mixes in the seed. Aggregation tooling compares the config half.
std::string config_fingerprint(const ExperimentConfig& cfg,
                               std::uint64_t seed);

// Materializes the task stream (synthetic generation or manifest load),
// including warm-up data when pretraining is enabled. The stream's feature
// width must match the first model layer.
TaskStream build_stream(const ExperimentConfig& cfg);

// Mode string parsed with the adapter-init choice resolved from lora.init.
ModeSpec config_mode(const ExperimentConfig& cfg);

RunConfig to_run_config(const ExperimentConfig& cfg, std::uint64_t seed,
                        const std::string& checkpoint_dir);

}  // namespace slca

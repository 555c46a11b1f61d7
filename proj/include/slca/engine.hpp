#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "slca/data.hpp"
#include "slca/evalmetrics.hpp"
#include "slca/lora.hpp"
#include "slca/losses.hpp"
#include "slca/model.hpp"
#include "slca/rng.hpp"
#include "slca/stats.hpp"

namespace slca {

// ---------------------------------------------------------------------------
// Phase configurations
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

// Joint supervised warm-up on held-out classes; the head it trains through
// is temporary and dropped afterwards.
struct PretrainConfig {
  std::size_t epochs = 30;
  double lr = 0.01;
  std::size_t batch_size = 32;
  double momentum = 0.9;
};

struct AlignConfig {
  std::size_t samples_per_class = 256;
  double tau = 0.1;    // logit-normalization temperature
  double eta = 0.02;   // mean-scaling strength
  std::size_t epochs = 5;
  double lr = 0.01;
  std::size_t batch_size = 128;
  double momentum = 0.9;
  bool logit_norm = true;  // false trains the aligned head with plain CE
};

enum class LossKind { kCe, kSce };

// ---------------------------------------------------------------------------
// Single-phase entry points
// ---------------------------------------------------------------------------

// Trains the backbone jointly on a labeled warm-up set at a uniform rate,
// then drops the temporary head. The model must not carry a head yet; an
// empty set is a contract violation. Returns the per-epoch mean loss.
std::vector<double> pretrain_backbone(Model& model, const Dataset& set,
                                      const PretrainConfig& cfg,
                                      RngState& rng);

struct TaskTrainLog {
  std::vector<double> epoch_loss;  // sample-weighted mean loss per epoch
  std::vector<std::string> group_names;
  // [epoch][group]: gradient norm of the final batch of the epoch.
  std::vector<std::vector<double>> epoch_group_grad_norm;
};

// One task of sequential fine-tuning. The loss sees only the logit columns
// of the head block owned by task.task_id, so rows of other tasks receive
// structurally zero gradients; their weight-grad rows are additionally
// zeroed before each step as a guard. The head must already carry the
// task's block; train labels outside the task's class set are a contract
// violation.
TaskTrainLog train_task(Model& model, const Task& task,
                        const std::vector<ParamGroup>& groups,
                        LossKind loss_kind, const SceConfig& sce_cfg,
                        const TrainConfig& cfg, RngState& rng);

struct AlignOutcome {
  Head head;  // retrained copy; the model's own head is untouched
  std::vector<double> epoch_loss;
};

// Classifier alignment from stored statistics: scales every class mean by
// 1 / (1 + eta * (T - t)) with T = the newest stored task, draws
// samples_per_class feature vectors per class from its Gaussian, and
// retrains a clone of the model's head on the balanced generated set.
// The model (and its own head) is read-only throughout. The head must
// cover every stored class; a sampling failure is rethrown naming the
// class. Deterministic in rng (taken by value: repeat calls with the same
// state are identical).
AlignOutcome align_classifier(const Model& model, const StatsStore& store,
                              const AlignConfig& cfg, RngState rng);

// ---------------------------------------------------------------------------
// Mode strings
// ---------------------------------------------------------------------------

enum class AlignKind { kNone, kPlainCe, kLogitNorm };

// Parsed form of a mode string: a base token plus '+'-joined flags.
//   base:  seqft | sl | fixed-backbone | hybrid | hybrid-noinit
//        | subset:attn | subset:mlp | subset:norm | subset:bias
//   flags: sce (symmetric loss), ca (align at eval), ln (normalized logits
//          during alignment; requires ca)
// Examples: "sl+sce+ca+ln", "seqft", "hybrid+ca+ln".
struct ModeSpec {
  GroupSpec group;
  LossKind loss = LossKind::kCe;
  AlignKind align = AlignKind::kNone;
  LoraInit lora_init = LoraInit::kSvd;
  std::string text;
};

ModeSpec parse_mode(const std::string& text);

// ---------------------------------------------------------------------------
// Full sequential runs
// ---------------------------------------------------------------------------

struct RunConfig {
  std::vector<std::size_t> model_dims;  // {input, hidden..., feature}
  Activation activation = Activation::kGelu;
  Rates rates;
  TrainConfig train;
  bool pretrain_enabled = false;
  PretrainConfig pretrain;
  AlignConfig align;
  SceConfig sce;
  CovVariant cov_variant = CovVariant::kFull;
  double shared_gamma = 0.9;
  std::size_t lora_rank = 4;
  std::uint64_t seed = 0;
  std::string config_fingerprint;
  std::string checkpoint_dir;  // empty disables per-stage checkpoints
};

struct RunOutcome {
  RunReport report;
  Model model;       // state after the last completed stage
  StatsStore store;  // populated only by aligning modes
};

// Hash of every non-head parameter's raw bytes, adapter tensors included.
std::uint64_t backbone_bytes_hash(const Model& model);

// Runs the stream end to end: build (optionally warm-started), per task
// grow head / rebuild groups / train / collect statistics (aligning modes),
// then evaluate after every task, through a freshly aligned head when the
// mode asks for one. Class-incremental streams report seen-task accuracy;
// domain-incremental streams report block-averaged accuracy over the seen
// domains' test union and reject aligning modes. The backbone byte hash is
// compared around every alignment call and any mismatch clears
// report.backbone_intact_through_alignment. A stage failure stops the run
// and leaves the exception text in report.error; completed stages still
// yield metrics. Deterministic in cfg.seed: each phase draws from its own
// split of the master stream, in program order.
RunOutcome run_sequence(const RunConfig& cfg, const ModeSpec& mode,
                        const TaskStream& stream);

}  // namespace slca

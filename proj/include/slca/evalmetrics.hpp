#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "slca/data.hpp"
#include "slca/model.hpp"
#include "slca/rng.hpp"
#include "slca/tensor.hpp"

namespace slca {

// Class prediction through an explicit head (the model's own or an aligned
// copy). Argmax per row; ties resolve to the lowest class id.
std::vector<int> predict_classes(const Model& model, const Head& head,
                                 const Tensor& inputs);

struct SeenEval {
  double overall = 0.0;            // correct / total over the union
  std::vector<double> per_task;    // one accuracy per evaluated task
};

// Evaluates the test sets of tasks[0..upto); upto = 0 or beyond the stream
// is a contract violation.
SeenEval seen_accuracy(const Model& model, const Head& head,
                       const std::vector<Task>& tasks, std::size_t upto);

// Domain-incremental prediction: the head holds one block per domain over a
// fixed class set; per-class scores are averaged across blocks before the
// argmax. Blocks with mismatched class sets are a contract violation.
double domain_eval(const Model& model, const Head& head, const Dataset& test);

struct RunReport {
  std::string mode;
  std::string scenario;
  std::uint64_t seed = 0;
  std::string config_fingerprint;
  std::size_t stages_completed = 0;
  std::size_t total_tasks = 0;
  // acc_matrix[i][j]: accuracy on task j+1's test set after stage i+1;
  // ragged (j <= i).
  std::vector<std::vector<double>> acc_matrix;
  // Accuracy over all seen test data per stage, through the aligned head
  // when the mode aligns.
  std::vector<double> stage_seen_acc;
  // Same through the model's own (continually trained) head.
  std::vector<double> stage_raw_acc;
  double last_acc = 0.0;
  double inc_acc = 0.0;
  // Backbone bytes compared around every alignment call.
  bool backbone_intact_through_alignment = true;
  std::vector<std::vector<double>> task_epoch_loss;
  std::string error;  // non-empty marks a partial run
};

// last = final stage seen-accuracy, inc = mean over stages.
void finalize_report(RunReport& report);

struct ProbeConfig {
  double lr = 0.01;
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  double momentum = 0.9;
};

// Joint cross-entropy probe on frozen features: trains a fresh linear head
// over every train class, returns test accuracy. The backbone is read-only
// throughout.
double linear_probe(const Model& model, const Dataset& train,
                    const Dataset& test, const ProbeConfig& cfg,
                    RngState& rng);

// Kernel selector for representation similarity. Only the linear kernel is
// implemented; kRbf is reserved and rejected as unsupported.
enum class CkaKernel { kLinear, kRbf };

// Centered-kernel alignment between two representation matrices with
// matching rows; linear kernel:
//   ||Xc^T Yc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F).
// Symmetric, 1 on self, invariant to orthogonal maps and isotropic scaling.
// Fewer than two rows or a constant representation is DegenerateInput.
double cka(const Tensor& x, const Tensor& y,
           CkaKernel kernel = CkaKernel::kLinear);

}  // namespace slca

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "slca/data.hpp"
#include "slca/model.hpp"
#include "slca/tensor.hpp"

namespace slca {

enum class CovVariant { kFull, kDiag, kShared };

// Frozen first/second moments of one class's features, taken at the end of
// its task. This is all the engine ever keeps of past data.
struct ClassStats {
  int class_id = 0;
  int task_id = 0;
  std::size_t count = 0;
  Tensor mean;  // [d]
  // kFull: [d x d] covariance; kDiag: [d] variances; kShared: undefined
  // (the store-level accumulator carries it).
  Tensor cov;
};

struct StatsStore {
  CovVariant variant = CovVariant::kFull;
  double gamma = 0.9;  // shared-variant momentum
  std::vector<ClassStats> entries;  // class-arrival order
  Tensor shared_cov;                // [d x d], kShared only

  bool has_class(int class_id) const;
  const ClassStats& find(int class_id) const;
  int max_task() const;  // 0 when empty
};

// One evaluation-mode pass over the task's training data; per class stores
// the mean and the maximum-likelihood (1/N) covariance in the store's
// variant. A class already present, an empty task, or a task sample with a
// label outside the task's class set is a contract violation. A single
// sample yields a zero covariance, which is valid.
void collect_stats(const Model& model, const Task& task, StatsStore& store);

// lambda_t = 1 / (1 + eta * (T - t)): older tasks shrink toward the origin,
// the current task (t = T) keeps scale exactly 1.
double mean_scale(int task_id, int current_task, double eta);

// Scaled means for every stored class at stage current_task; current_task
// must cover every stored task id.
std::vector<std::pair<int, Tensor>> scale_means(const StatsStore& store,
                                                int current_task, double eta);

// Binary serialization; load(save(s)) is bit-exact.
void save_stats(const StatsStore& store, const std::string& path);
StatsStore load_stats(const std::string& path);

}  // namespace slca

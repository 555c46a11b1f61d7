#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "slca/rng.hpp"
#include "slca/tensor.hpp"

namespace slca {

struct Dataset {
  Tensor inputs;             // [n x d]
  std::vector<int> labels;   // n entries
  std::vector<int> domains;  // n entries or empty

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return inputs.defined() ? inputs.cols() : 0; }
  bool empty() const { return labels.empty(); }
  std::vector<int> class_list() const;  // sorted unique labels
};

struct DatasetPair {
  Dataset train;
  Dataset test;
};

struct Task {
  int task_id = 0;  // 1-based stage index
  std::vector<int> class_ids;
  Dataset train;
  Dataset test;
};

enum class Scenario { kClassIncremental, kDomainIncremental };

struct TaskStream {
  Scenario scenario = Scenario::kClassIncremental;
  std::vector<Task> tasks;
  Dataset pretrain;  // empty when the stream carries none

  bool has_pretrain() const { return !pretrain.empty(); }
};

// Gaussian-mixture generator. Class c draws a base mean
// separation * z_c + mean_shift * 1 from a seeded field; with more than one
// cluster per class the cluster centers scatter around the base mean at half
// the separation scale. Within-cluster noise is unit isotropic, so
// separation monotonically controls class overlap and separation = 0 makes
// every class identical. Exactly train_per_class / test_per_class samples
// per class, class-blocked, deterministic in rng.
struct SyntheticSpec {
  std::size_t classes = 20;
  std::size_t input_dim = 24;
  std::size_t clusters_per_class = 1;
  double separation = 3.0;
  double mean_shift = 0.0;
  std::size_t train_per_class = 50;
  std::size_t test_per_class = 50;
  int first_class_id = 0;
};

DatasetPair make_synthetic(const SyntheticSpec& spec, RngState& rng);

// Domain-tagged variant for domain-incremental streams: class means are
// drawn once and shared by every domain; each domain then adds its own
// offset vector with per-coordinate scale domain_shift and redraws the
// sampling noise. Domain ids run 0..domains-1 in both splits.
DatasetPair make_synthetic_domains(const SyntheticSpec& spec,
                                   std::size_t domains, double domain_shift,
                                   RngState& rng);

// CSV with header "label,x0,x1,..." or "label,domain,x0,x1,...", UTF-8,
// integer labels/domains, real features. Malformed content raises ParseError
// carrying the 1-based line number; an empty file (no data rows) is a
// contract violation.
Dataset load_csv(const std::string& path);

// Seeded random partition of the class set into `tasks` ordered tasks; when
// the classes do not divide evenly the earliest tasks absorb one extra class
// each. Test labels must be covered by train labels; more tasks than classes
// is a contract violation.
TaskStream split_class_incremental(const DatasetPair& data, std::size_t tasks,
                                   RngState& rng);

// One stage per domain id, ascending; every domain must carry the identical
// class set, and both splits must carry domain ids.
TaskStream split_domain_incremental(const DatasetPair& data);

// JSON stream manifest:
//   {"scenario": "class_incremental" | "domain_incremental",
//    "pretrain_csv": "path" (optional),
//    "tasks": [{"train_csv": "path", "test_csv": "path"}, ...]}
// Relative paths resolve against the manifest's directory. Task class sets
// must be disjoint for class-incremental streams and identical for
// domain-incremental ones.
TaskStream load_manifest(const std::string& path);

}  // namespace slca

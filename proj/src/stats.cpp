#include "slca/stats.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>

#include "slca/errors.hpp"

namespace slca {

bool StatsStore::has_class(int class_id) const {
  for (const auto& e : entries)
    if (e.class_id == class_id) return true;
  return false;
}

const ClassStats& StatsStore::find(int class_id) const {
  for (const auto& e : entries)
    if (e.class_id == class_id) return e;
  throw ContractViolation("stats: class " + std::to_string(class_id) +
                          " not collected");
}

int StatsStore::max_task() const {
  int t = 0;
  for (const auto& e : entries) t = std::max(t, e.task_id);
  return t;
}

void collect_stats(const Model& model, const Task& task, StatsStore& store) {
  if (task.train.empty())
    throw ContractViolation("collect_stats: task " +
                            std::to_string(task.task_id) + " has no data");
  for (int c : task.class_ids)
    if (store.has_class(c))
      throw ContractViolation("collect_stats: class " + std::to_string(c) +
                              " already collected");

  NoGradGuard ng;
  const Tensor feats = model.forward_features(task.train.inputs);
  const std::size_t d = feats.cols();
  const auto& fv = feats.values();

  std::map<int, std::vector<std::size_t>> rows_of;
  for (std::size_t i = 0; i < task.train.size(); ++i) {
    const int label = task.train.labels[i];
    if (std::find(task.class_ids.begin(), task.class_ids.end(), label) ==
        task.class_ids.end())
      throw ContractViolation("collect_stats: label " + std::to_string(label) +
                              " outside task " + std::to_string(task.task_id));
    rows_of[label].push_back(i);
  }

  // Class-arrival order follows the task's class list.
  for (int cls : task.class_ids) {
    const auto it = rows_of.find(cls);
    if (it == rows_of.end() || it->second.empty())
      throw ContractViolation("collect_stats: class " + std::to_string(cls) +
                              " has no samples in task " +
                              std::to_string(task.task_id));
    const auto& rows = it->second;
    const double n = static_cast<double>(rows.size());

    std::vector<double> mu(d, 0.0);
    for (std::size_t r : rows)
      for (std::size_t j = 0; j < d; ++j) mu[j] += fv[r * d + j];
    for (double& v : mu) v /= n;

    ClassStats cs;
    cs.class_id = cls;
    cs.task_id = task.task_id;
    cs.count = rows.size();
    cs.mean = Tensor({d}, mu, false);

    if (store.variant == CovVariant::kDiag) {
      std::vector<double> var(d, 0.0);
      for (std::size_t r : rows)
        for (std::size_t j = 0; j < d; ++j) {
          const double dv = fv[r * d + j] - mu[j];
          var[j] += dv * dv;
        }
      for (double& v : var) v /= n;
      cs.cov = Tensor({d}, std::move(var), false);
    } else {
      std::vector<double> cov(d * d, 0.0);
      for (std::size_t r : rows)
        for (std::size_t i = 0; i < d; ++i) {
          const double di = fv[r * d + i] - mu[i];
          if (di == 0.0) continue;
          for (std::size_t j = i; j < d; ++j)
            cov[i * d + j] += di * (fv[r * d + j] - mu[j]);
        }
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) {
          cov[i * d + j] /= n;
          cov[j * d + i] = cov[i * d + j];
        }
      if (store.variant == CovVariant::kFull) {
        cs.cov = Tensor({d, d}, std::move(cov), false);
      } else {
        // Momentum merge in class-arrival order; the first class ever seeds
        // the accumulator so early classes are not scaled down.
        if (!store.shared_cov.defined()) {
          store.shared_cov = Tensor({d, d}, std::move(cov), false);
        } else {
          auto& acc = store.shared_cov.mutable_values();
          for (std::size_t i = 0; i < acc.size(); ++i)
            acc[i] = store.gamma * acc[i] + (1.0 - store.gamma) * cov[i];
        }
      }
    }
    store.entries.push_back(std::move(cs));
  }
}

double mean_scale(int task_id, int current_task, double eta) {
  if (eta < 0.0) throw ContractViolation("mean_scale: eta must be >= 0");
  if (task_id > current_task)
    throw ContractViolation("mean_scale: task " + std::to_string(task_id) +
                            " is beyond stage " +
                            std::to_string(current_task));
  return 1.0 / (1.0 + eta * static_cast<double>(current_task - task_id));
}

std::vector<std::pair<int, Tensor>> scale_means(const StatsStore& store,
                                                int current_task, double eta) {
  std::vector<std::pair<int, Tensor>> out;
  out.reserve(store.entries.size());
  for (const auto& e : store.entries) {
    const double lam = mean_scale(e.task_id, current_task, eta);
    std::vector<double> m = e.mean.values();
    for (double& v : m) v *= lam;
    const std::size_t d = m.size();
    out.emplace_back(e.class_id, Tensor({d}, std::move(m), false));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization (little-endian binary)
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kMagic = 0x54534C53;  // "SLST"

void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void put_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void put_vec(std::ostream& os, const std::vector<double>& v) {
  put_u32(os, static_cast<std::uint32_t>(v.size()));
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}
std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
double get_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::vector<double> get_vec(std::istream& is) {
  std::vector<double> v(get_u32(is));
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
  return v;
}

}  // namespace

void save_stats(const StatsStore& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractViolation("save_stats: cannot open " + path);
  put_u32(os, kMagic);
  put_u32(os, static_cast<std::uint32_t>(store.variant));
  put_f64(os, store.gamma);
  put_u32(os, store.shared_cov.defined() ? 1 : 0);
  if (store.shared_cov.defined()) {
    put_u32(os, static_cast<std::uint32_t>(store.shared_cov.rows()));
    put_vec(os, store.shared_cov.values());
  }
  put_u32(os, static_cast<std::uint32_t>(store.entries.size()));
  for (const auto& e : store.entries) {
    put_u32(os, static_cast<std::uint32_t>(e.class_id));
    put_u32(os, static_cast<std::uint32_t>(e.task_id));
    put_u32(os, static_cast<std::uint32_t>(e.count));
    put_vec(os, e.mean.values());
    put_u32(os, e.cov.defined() ? static_cast<std::uint32_t>(e.cov.rank()) : 0);
    if (e.cov.defined()) put_vec(os, e.cov.values());
  }
  if (!os) throw NumericalFailure("save_stats: write failed: " + path);
}

StatsStore load_stats(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("load_stats: cannot open " + path);
  if (get_u32(is) != kMagic)
    throw ParseError("load_stats: bad magic in " + path);
  StatsStore store;
  store.variant = static_cast<CovVariant>(get_u32(is));
  store.gamma = get_f64(is);
  if (get_u32(is) == 1) {
    const std::size_t d = get_u32(is);
    store.shared_cov = Tensor({d, d}, get_vec(is), false);
  }
  const std::uint32_t n = get_u32(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    ClassStats e;
    e.class_id = static_cast<int>(get_u32(is));
    e.task_id = static_cast<int>(get_u32(is));
    e.count = get_u32(is);
    auto m = get_vec(is);
    const std::size_t md = m.size();
    e.mean = Tensor({md}, std::move(m), false);
    const std::uint32_t cov_rank = get_u32(is);
    if (cov_rank > 0) {
      auto cv = get_vec(is);
      const std::size_t cd = cv.size();
      if (cov_rank == 1)
        e.cov = Tensor({cd}, std::move(cv), false);
      else {
        const std::size_t d = e.mean.numel();
        e.cov = Tensor({d, d}, std::move(cv), false);
      }
    }
    store.entries.push_back(std::move(e));
  }
  if (!is) throw ParseError("load_stats: truncated file " + path);
  return store;
}

}  // namespace slca

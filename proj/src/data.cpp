#include "slca/data.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "slca/errors.hpp"

namespace slca {

std::vector<int> Dataset::class_list() const {
  std::set<int> uniq(labels.begin(), labels.end());
  return {uniq.begin(), uniq.end()};
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

namespace {

void sample_class_block(RngState& rng, const std::vector<double>& centers,
                        std::size_t clusters, std::size_t d, std::size_t count,
                        std::vector<double>& rows) {
  std::vector<double> noise(d);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t k =
        clusters == 1 ? 0 : static_cast<std::size_t>(uniform_below(rng, clusters));
    fill_normal(rng, noise.data(), d);
    const double* center = &centers[k * d];
    for (std::size_t j = 0; j < d; ++j) rows.push_back(center[j] + noise[j]);
  }
}

}  // namespace

DatasetPair make_synthetic(const SyntheticSpec& spec, RngState& rng) {
  if (spec.classes == 0 || spec.input_dim == 0 || spec.clusters_per_class == 0)
    throw ContractViolation("make_synthetic: classes, input_dim and "
                            "clusters_per_class must be positive");
  if (spec.separation < 0.0)
    throw ContractViolation("make_synthetic: separation must be nonnegative");
  if (spec.train_per_class == 0 || spec.test_per_class == 0)
    throw ContractViolation("make_synthetic: per-class counts must be "
                            "positive");

  const std::size_t d = spec.input_dim;
  std::vector<double> train_rows, test_rows;
  train_rows.reserve(spec.classes * spec.train_per_class * d);
  test_rows.reserve(spec.classes * spec.test_per_class * d);
  std::vector<int> train_labels, test_labels;

  std::vector<double> base(d), offsets;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    fill_normal(rng, base.data(), d);
    std::vector<double> centers(spec.clusters_per_class * d);
    if (spec.clusters_per_class > 1) {
      offsets.resize(spec.clusters_per_class * d);
      fill_normal(rng, offsets.data(), offsets.size());
    }
    for (std::size_t k = 0; k < spec.clusters_per_class; ++k)
      for (std::size_t j = 0; j < d; ++j) {
        double v = spec.separation * base[j] + spec.mean_shift;
        if (spec.clusters_per_class > 1)
          v += 0.5 * spec.separation * offsets[k * d + j];
        centers[k * d + j] = v;
      }
    sample_class_block(rng, centers, spec.clusters_per_class, d,
                       spec.train_per_class, train_rows);
    sample_class_block(rng, centers, spec.clusters_per_class, d,
                       spec.test_per_class, test_rows);
    const int label = spec.first_class_id + static_cast<int>(c);
    train_labels.insert(train_labels.end(), spec.train_per_class, label);
    test_labels.insert(test_labels.end(), spec.test_per_class, label);
  }

  DatasetPair out;
  out.train.inputs =
      Tensor::matrix(train_labels.size(), d, std::move(train_rows));
  out.train.labels = std::move(train_labels);
  out.test.inputs = Tensor::matrix(test_labels.size(), d, std::move(test_rows));
  out.test.labels = std::move(test_labels);
  return out;
}

DatasetPair make_synthetic_domains(const SyntheticSpec& spec,
                                   std::size_t domains, double domain_shift,
                                   RngState& rng) {
  if (domains == 0)
    throw ContractViolation("make_synthetic_domains: need at least one "
                            "domain");
  if (domain_shift < 0.0)
    throw ContractViolation("make_synthetic_domains: domain_shift must be "
                            "nonnegative");
  if (spec.classes == 0 || spec.input_dim == 0 || spec.clusters_per_class == 0)
    throw ContractViolation("make_synthetic_domains: classes, input_dim and "
                            "clusters_per_class must be positive");
  if (spec.separation < 0.0)
    throw ContractViolation("make_synthetic_domains: separation must be "
                            "nonnegative");
  if (spec.train_per_class == 0 || spec.test_per_class == 0)
    throw ContractViolation("make_synthetic_domains: per-class counts must "
                            "be positive");

  const std::size_t d = spec.input_dim;
  // One shared mean field: the class geometry is identical in every domain.
  std::vector<std::vector<double>> centers(spec.classes);
  std::vector<double> base(d), offsets;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    fill_normal(rng, base.data(), d);
    centers[c].resize(spec.clusters_per_class * d);
    if (spec.clusters_per_class > 1) {
      offsets.resize(spec.clusters_per_class * d);
      fill_normal(rng, offsets.data(), offsets.size());
    }
    for (std::size_t k = 0; k < spec.clusters_per_class; ++k)
      for (std::size_t j = 0; j < d; ++j) {
        double v = spec.separation * base[j] + spec.mean_shift;
        if (spec.clusters_per_class > 1)
          v += 0.5 * spec.separation * offsets[k * d + j];
        centers[c][k * d + j] = v;
      }
  }

  std::vector<double> train_rows, test_rows;
  std::vector<int> train_labels, test_labels, train_domains, test_domains;
  std::vector<double> shift(d), shifted;
  for (std::size_t dom = 0; dom < domains; ++dom) {
    fill_normal(rng, shift.data(), d);
    for (double& v : shift) v *= domain_shift;
    for (std::size_t c = 0; c < spec.classes; ++c) {
      shifted = centers[c];
      for (std::size_t k = 0; k < spec.clusters_per_class; ++k)
        for (std::size_t j = 0; j < d; ++j) shifted[k * d + j] += shift[j];
      sample_class_block(rng, shifted, spec.clusters_per_class, d,
                         spec.train_per_class, train_rows);
      sample_class_block(rng, shifted, spec.clusters_per_class, d,
                         spec.test_per_class, test_rows);
      const int label = spec.first_class_id + static_cast<int>(c);
      train_labels.insert(train_labels.end(), spec.train_per_class, label);
      test_labels.insert(test_labels.end(), spec.test_per_class, label);
      train_domains.insert(train_domains.end(), spec.train_per_class,
                           static_cast<int>(dom));
      test_domains.insert(test_domains.end(), spec.test_per_class,
                          static_cast<int>(dom));
    }
  }

  DatasetPair out;
  out.train.inputs =
      Tensor::matrix(train_labels.size(), d, std::move(train_rows));
  out.train.labels = std::move(train_labels);
  out.train.domains = std::move(train_domains);
  out.test.inputs = Tensor::matrix(test_labels.size(), d, std::move(test_rows));
  out.test.labels = std::move(test_labels);
  out.test.domains = std::move(test_domains);
  return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int parse_int_cell(const std::string& cell, std::size_t line_no,
                   const char* what) {
  const std::string t = trim(cell);
  int v = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size())
    throw ParseError("csv line " + std::to_string(line_no) + ": bad " + what +
                     " '" + cell + "'");
  return v;
}

double parse_double_cell(const std::string& cell, std::size_t line_no,
                         std::size_t col) {
  const std::string t = trim(cell);
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used != t.size()) throw std::invalid_argument(t);
    return v;
  } catch (const std::exception&) {
    throw ParseError("csv line " + std::to_string(line_no) +
                     ": bad number in column " + std::to_string(col));
  }
}

}  // namespace

Dataset load_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(is, line))
    throw ContractViolation("load_csv: empty file " + path);

  const auto header = split_csv_line(line);
  if (header.empty() || trim(header[0]) != "label")
    throw ParseError("csv line 1: header must start with 'label'");
  const bool has_domain = header.size() > 1 && trim(header[1]) == "domain";
  const std::size_t feat_begin = has_domain ? 2 : 1;
  if (header.size() <= feat_begin)
    throw ParseError("csv line 1: no feature columns");
  for (std::size_t j = feat_begin; j < header.size(); ++j) {
    const std::string expect = "x" + std::to_string(j - feat_begin);
    if (trim(header[j]) != expect)
      throw ParseError("csv line 1: expected column '" + expect + "', got '" +
                       header[j] + "'");
  }
  const std::size_t d = header.size() - feat_begin;

  Dataset ds;
  std::vector<double> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError("csv line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " cells, got " +
                       std::to_string(cells.size()));
    ds.labels.push_back(parse_int_cell(cells[0], line_no, "label"));
    if (has_domain)
      ds.domains.push_back(parse_int_cell(cells[1], line_no, "domain"));
    for (std::size_t j = 0; j < d; ++j)
      rows.push_back(parse_double_cell(cells[feat_begin + j], line_no,
                                       feat_begin + j));
  }
  if (ds.labels.empty())
    throw ContractViolation("load_csv: no data rows in " + path);
  ds.inputs = Tensor::matrix(ds.labels.size(), d, std::move(rows));
  return ds;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

namespace {

Dataset filter_by_classes(const Dataset& src, const std::set<int>& keep) {
  Dataset out;
  const std::size_t d = src.dim();
  std::vector<double> rows;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!keep.count(src.labels[i])) continue;
    const double* r = &src.inputs.values()[i * d];
    rows.insert(rows.end(), r, r + d);
    out.labels.push_back(src.labels[i]);
    if (!src.domains.empty()) out.domains.push_back(src.domains[i]);
  }
  if (!out.labels.empty())
    out.inputs = Tensor::matrix(out.labels.size(), d, std::move(rows));
  return out;
}

Dataset filter_by_domain(const Dataset& src, int domain) {
  Dataset out;
  const std::size_t d = src.dim();
  std::vector<double> rows;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src.domains[i] != domain) continue;
    const double* r = &src.inputs.values()[i * d];
    rows.insert(rows.end(), r, r + d);
    out.labels.push_back(src.labels[i]);
    out.domains.push_back(domain);
  }
  if (!out.labels.empty())
    out.inputs = Tensor::matrix(out.labels.size(), d, std::move(rows));
  return out;
}

}  // namespace

TaskStream split_class_incremental(const DatasetPair& data, std::size_t tasks,
                                   RngState& rng) {
  if (tasks == 0)
    throw ContractViolation("split_class_incremental: zero tasks");
  if (data.train.empty())
    throw ContractViolation("split_class_incremental: empty train set");
  const std::vector<int> classes = data.train.class_list();
  if (tasks > classes.size())
    throw ContractViolation("split_class_incremental: " +
                            std::to_string(tasks) + " tasks for " +
                            std::to_string(classes.size()) + " classes");
  const auto test_classes = data.test.class_list();
  for (int c : test_classes)
    if (!std::binary_search(classes.begin(), classes.end(), c))
      throw ContractViolation("split_class_incremental: test class " +
                              std::to_string(c) + " missing from train set");

  std::vector<std::size_t> order(classes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(rng, order);

  TaskStream stream;
  stream.scenario = Scenario::kClassIncremental;
  const std::size_t base = classes.size() / tasks;
  const std::size_t extra = classes.size() % tasks;
  std::size_t cursor = 0;
  for (std::size_t t = 0; t < tasks; ++t) {
    const std::size_t take = base + (t < extra ? 1 : 0);
    Task task;
    task.task_id = static_cast<int>(t) + 1;
    std::set<int> keep;
    for (std::size_t i = 0; i < take; ++i) {
      const int cls = classes[order[cursor++]];
      task.class_ids.push_back(cls);
      keep.insert(cls);
    }
    task.train = filter_by_classes(data.train, keep);
    task.test = filter_by_classes(data.test, keep);
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

TaskStream split_domain_incremental(const DatasetPair& data) {
  if (data.train.empty())
    throw ContractViolation("split_domain_incremental: empty train set");
  if (data.train.domains.empty() || data.test.domains.empty())
    throw ContractViolation("split_domain_incremental: domain column "
                            "required in both splits");
  std::set<int> domain_set(data.train.domains.begin(),
                           data.train.domains.end());
  const std::vector<int> all_classes = data.train.class_list();

  TaskStream stream;
  stream.scenario = Scenario::kDomainIncremental;
  int t = 1;
  for (int dom : domain_set) {
    Task task;
    task.task_id = t++;
    task.class_ids = all_classes;
    task.train = filter_by_domain(data.train, dom);
    task.test = filter_by_domain(data.test, dom);
    if (task.train.class_list() != all_classes)
      throw ContractViolation("split_domain_incremental: domain " +
                              std::to_string(dom) +
                              " does not cover the shared class set");
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

TaskStream load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("load_manifest: cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("load_manifest: " + path + ": " + e.what());
  }
  const auto dir = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp.string() : (dir / fp).string();
  };

  TaskStream stream;
  const std::string scenario = j.value("scenario", "class_incremental");
  if (scenario == "class_incremental")
    stream.scenario = Scenario::kClassIncremental;
  else if (scenario == "domain_incremental")
    stream.scenario = Scenario::kDomainIncremental;
  else
    throw ParseError("load_manifest: unknown scenario '" + scenario + "'");

  if (!j.contains("tasks") || !j["tasks"].is_array() || j["tasks"].empty())
    throw ParseError("load_manifest: 'tasks' must be a non-empty array");

  if (j.contains("pretrain_csv"))
    stream.pretrain = load_csv(resolve(j["pretrain_csv"].get<std::string>()));

  std::set<int> seen_classes;
  std::vector<int> first_set;
  int t = 1;
  for (const auto& jt : j["tasks"]) {
    if (!jt.contains("train_csv") || !jt.contains("test_csv"))
      throw ParseError("load_manifest: task " + std::to_string(t) +
                       " needs train_csv and test_csv");
    Task task;
    task.task_id = t;
    task.train = load_csv(resolve(jt["train_csv"].get<std::string>()));
    task.test = load_csv(resolve(jt["test_csv"].get<std::string>()));
    task.class_ids = task.train.class_list();
    if (stream.scenario == Scenario::kClassIncremental) {
      for (int c : task.class_ids)
        if (!seen_classes.insert(c).second)
          throw ParseError("load_manifest: class " + std::to_string(c) +
                           " appears in more than one task");
    } else {
      if (t == 1)
        first_set = task.class_ids;
      else if (task.class_ids != first_set)
        throw ParseError("load_manifest: task " + std::to_string(t) +
                         " class set differs from task 1");
    }
    stream.tasks.push_back(std::move(task));
    ++t;
  }
  return stream;
}

}  // namespace slca

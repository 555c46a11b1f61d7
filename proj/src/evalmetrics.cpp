#include "slca/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "slca/errors.hpp"
#include "slca/losses.hpp"
#include "slca/sgd.hpp"

namespace slca {

namespace {

int argmax_class(const double* scores, const std::vector<int>& class_ids) {
  double best = -std::numeric_limits<double>::infinity();
  int best_class = 0;
  bool first = true;
  for (std::size_t r = 0; r < class_ids.size(); ++r) {
    const double s = scores[r];
    if (first || s > best || (s == best && class_ids[r] < best_class)) {
      best = s;
      best_class = class_ids[r];
      first = false;
    }
  }
  return best_class;
}

}  // namespace

std::vector<int> predict_classes(const Model& model, const Head& head,
                                 const Tensor& inputs) {
  if (head.width() == 0)
    throw ContractViolation("predict_classes: head has no classes");
  NoGradGuard ng;
  const Tensor feats = model.forward_features(inputs);
  const Tensor logits = linear(feats, head.weight, head.bias);
  const std::size_t n = logits.rows(), c = logits.cols();
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = argmax_class(&logits.values()[i * c], head.class_ids);
  return out;
}

SeenEval seen_accuracy(const Model& model, const Head& head,
                       const std::vector<Task>& tasks, std::size_t upto) {
  if (upto == 0 || upto > tasks.size())
    throw ContractViolation("seen_accuracy: stage " + std::to_string(upto) +
                            " outside the stream");
  SeenEval ev;
  std::size_t correct = 0, total = 0;
  for (std::size_t t = 0; t < upto; ++t) {
    const Dataset& test = tasks[t].test;
    if (test.empty())
      throw ContractViolation("seen_accuracy: task " +
                              std::to_string(tasks[t].task_id) +
                              " has no test data");
    const auto pred = predict_classes(model, head, test.inputs);
    std::size_t task_correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
      task_correct += (pred[i] == test.labels[i]) ? 1 : 0;
    ev.per_task.push_back(static_cast<double>(task_correct) /
                          static_cast<double>(pred.size()));
    correct += task_correct;
    total += pred.size();
  }
  ev.overall = static_cast<double>(correct) / static_cast<double>(total);
  return ev;
}

double domain_eval(const Model& model, const Head& head, const Dataset& test) {
  if (test.empty()) throw ContractViolation("domain_eval: empty test set");
  // Group head rows by block and verify each block repeats one class set.
  std::map<int, std::vector<std::size_t>> block_rows;
  for (std::size_t r = 0; r < head.width(); ++r)
    block_rows[head.task_of_row[r]].push_back(r);
  std::vector<int> first_set;
  for (const auto& [task, rows] : block_rows) {
    std::vector<int> ids;
    for (std::size_t r : rows) ids.push_back(head.class_ids[r]);
    if (first_set.empty())
      first_set = ids;
    else if (ids != first_set)
      throw ContractViolation("domain_eval: head block for task " +
                              std::to_string(task) +
                              " has a mismatched class set");
  }

  NoGradGuard ng;
  const Tensor feats = model.forward_features(test.inputs);
  const Tensor logits = linear(feats, head.weight, head.bias);
  const std::size_t n = logits.rows(), w = logits.cols();
  const double blocks = static_cast<double>(block_rows.size());

  std::size_t correct = 0;
  std::vector<double> score(first_set.size());
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(score.begin(), score.end(), 0.0);
    const double* row = &logits.values()[i * w];
    for (std::size_t r = 0; r < w; ++r) {
      const auto cls_pos =
          std::find(first_set.begin(), first_set.end(), head.class_ids[r]) -
          first_set.begin();
      score[static_cast<std::size_t>(cls_pos)] += row[r] / blocks;
    }
    const int pred = argmax_class(score.data(), first_set);
    correct += (pred == test.labels[i]) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

void finalize_report(RunReport& report) {
  if (report.stage_seen_acc.empty())
    throw ContractViolation("finalize_report: no completed stages");
  report.stages_completed = report.stage_seen_acc.size();
  report.last_acc = report.stage_seen_acc.back();
  double s = 0.0;
  for (double v : report.stage_seen_acc) s += v;
  report.inc_acc = s / static_cast<double>(report.stage_seen_acc.size());
}

double linear_probe(const Model& model, const Dataset& train,
                    const Dataset& test, const ProbeConfig& cfg,
                    RngState& rng) {
  if (train.empty() || test.empty())
    throw ContractViolation("linear_probe: empty split");
  Tensor train_feats, test_feats;
  {
    NoGradGuard ng;
    train_feats = model.forward_features(train.inputs);
    test_feats = model.forward_features(test.inputs);
  }
  const std::size_t d = train_feats.cols();
  const std::vector<int> classes = train.class_list();
  const std::size_t c = classes.size();
  std::map<int, std::size_t> local;
  for (std::size_t i = 0; i < c; ++i) local[classes[i]] = i;

  std::vector<double> w0(c * d);
  fill_normal(rng, w0.data(), w0.size());
  for (double& v : w0) v *= 0.01;
  Tensor w({c, d}, std::move(w0), true);
  Tensor b = Tensor::zeros({c}, true);

  std::vector<std::size_t> labels(train.size());
  for (std::size_t i = 0; i < train.size(); ++i)
    labels[i] = local.at(train.labels[i]);

  SgdOptimizer opt({ParamGroup{"probe", cfg.lr, {w, b}}},
                   SgdConfig{cfg.momentum, 0.0});
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(rng, order);
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t take = std::min(cfg.batch_size, order.size() - start);
      std::vector<std::size_t> idx(order.begin() + start,
                                   order.begin() + start + take);
      std::vector<std::size_t> batch_labels(take);
      for (std::size_t i = 0; i < take; ++i) batch_labels[i] = labels[idx[i]];
      Tensor x = gather_rows(train_feats, idx);
      Tensor loss = ce(linear(x, w, b), batch_labels);
      opt.zero_grad();
      backward(loss);
      opt.step();
    }
  }

  NoGradGuard ng;
  const Tensor logits = linear(test_feats, w, b);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const int pred =
        argmax_class(&logits.values()[i * c], classes);
    correct += (pred == test.labels[i]) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

double cka(const Tensor& x, const Tensor& y, CkaKernel kernel) {
  if (kernel != CkaKernel::kLinear)
    throw UnsupportedOperation("cka: only the linear kernel is implemented");
  if (x.rank() != 2 || y.rank() != 2)
    throw ContractViolation("cka: inputs must be matrices");
  if (x.rows() != y.rows())
    throw ContractViolation("cka: row counts differ (" +
                            std::to_string(x.rows()) + " vs " +
                            std::to_string(y.rows()) + ")");
  const std::size_t n = x.rows();
  if (n < 2) throw DegenerateInput("cka: need at least two rows");

  auto centered = [n](const Tensor& t) {
    const std::size_t d = t.cols();
    std::vector<double> out(t.values());
    for (std::size_t j = 0; j < d; ++j) {
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) m += out[i * d + j];
      m /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) out[i * d + j] -= m;
    }
    return out;
  };
  const auto xc = centered(x);
  const auto yc = centered(y);
  const std::size_t dx = x.cols(), dy = y.cols();

  // ||A^T B||_F^2 accumulated without materializing the Gram matrices.
  auto cross_fro2 = [n](const std::vector<double>& a, std::size_t da,
                        const std::vector<double>& b, std::size_t db) {
    double total = 0.0;
    for (std::size_t p = 0; p < da; ++p)
      for (std::size_t q = 0; q < db; ++q) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          acc += a[i * da + p] * b[i * db + q];
        total += acc * acc;
      }
    return total;
  };

  const double num = cross_fro2(xc, dx, yc, dy);
  const double nx = std::sqrt(cross_fro2(xc, dx, xc, dx));
  const double ny = std::sqrt(cross_fro2(yc, dy, yc, dy));
  if (nx == 0.0 || ny == 0.0)
    throw DegenerateInput("cka: constant representation has no alignment");
  return num / (nx * ny);
}

}  // namespace slca

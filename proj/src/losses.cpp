#include "slca/losses.hpp"

#include <string>

#include "slca/errors.hpp"

namespace slca {

namespace {

void check_batch(const char* op, const Tensor& logits,
                 const std::vector<std::size_t>& labels) {
  if (logits.rank() != 2)
    throw ContractViolation(std::string(op) + ": logits must be [n x c]");
  if (logits.rows() == 0)
    throw ContractViolation(std::string(op) + ": empty batch");
  if (labels.size() != logits.rows())
    throw ContractViolation(std::string(op) + ": " +
                            std::to_string(labels.size()) + " labels for " +
                            std::to_string(logits.rows()) + " rows");
  for (std::size_t y : labels)
    if (y >= logits.cols())
      throw ContractViolation(std::string(op) + ": label " +
                              std::to_string(y) + " outside " +
                              std::to_string(logits.cols()) + " classes");
}

}  // namespace

Tensor ce(const Tensor& logits, const std::vector<std::size_t>& labels) {
  check_batch("ce", logits, labels);
  Tensor lp = select_per_row(log_softmax_rows(logits), labels);
  return neg(mean(lp));
}

Tensor logit_norm_ce(const Tensor& logits,
                     const std::vector<std::size_t>& labels, double tau) {
  check_batch("logit_norm_ce", logits, labels);
  return ce(logit_normalize(logits, tau), labels);
}

Tensor sce(const Tensor& logits, const std::vector<std::size_t>& labels,
           const SceConfig& cfg) {
  check_batch("sce", logits, labels);
  if (cfg.alpha < 0.0 || cfg.beta < 0.0 || cfg.alpha + cfg.beta <= 0.0)
    throw ContractViolation("sce: weights must be nonnegative and not both "
                            "zero");
  if (cfg.log_zero_clip <= 0.0)
    throw ContractViolation("sce: log_zero_clip must be positive");
  Tensor forward = ce(logits, labels);
  // Reverse term: -sum_c p_c log q_c with one-hot q and log 0 clipped to
  // -log_zero_clip, i.e. clip * (1 - p_y) per row.
  Tensor py = select_per_row(softmax_rows(logits), labels);
  Tensor rce = mul_scalar(mean(add_scalar(neg(py), 1.0)), cfg.log_zero_clip);
  return add(mul_scalar(forward, cfg.alpha), mul_scalar(rce, cfg.beta));
}

}  // namespace slca

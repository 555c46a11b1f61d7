#pragma once

#include <cstddef>
#include <vector>

#include "slca/tensor.hpp"

namespace slca {

struct SceConfig {
  double alpha = 1.0;
  double beta = 1.0;
  // Substitute for log 0 on the one-hot side of the reverse term; the
  // reverse loss per row collapses to log_zero_clip * (1 - p_y).
  double log_zero_clip = 4.0;
};

// Mean cross-entropy over the batch. labels[i] indexes the column scored as
// the true class; out-of-range labels and an empty batch are contract
// violations.
Tensor ce(const Tensor& logits, const std::vector<std::size_t>& labels);

// Cross-entropy on logits rescaled to constant magnitude 1/tau:
//   l_hat = l / (tau * ||l||_row).
// Invariant under positive row scaling; a zero row is DegenerateInput.
Tensor logit_norm_ce(const Tensor& logits,
                     const std::vector<std::size_t>& labels, double tau = 0.1);

// Symmetric cross-entropy alpha * CE + beta * RCE with one-hot targets;
// the gradient of the reverse term w.r.t. any logit is bounded by
// beta * log_zero_clip.
Tensor sce(const Tensor& logits, const std::vector<std::size_t>& labels,
           const SceConfig& cfg = {});

}  // namespace slca

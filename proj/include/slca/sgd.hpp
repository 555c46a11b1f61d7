#pragma once

#include <vector>

#include "slca/model.hpp"

namespace slca {

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 0.0;
};

// Plain SGD with heavy-ball momentum over named parameter groups:
//   v <- momentum * v + (g + weight_decay * p)
//   p <- p - lr_group * v
// Buffers start at zero and persist across steps for the optimizer's
// lifetime. Groups with lr = 0 are never touched, so their parameters stay
// bit-exact.
class SgdOptimizer {
 public:
  SgdOptimizer(const std::vector<ParamGroup>& groups, SgdConfig cfg);

  void step();
  void zero_grad();

 private:
  struct Slot {
    Tensor param;
    double lr;
    std::vector<double> velocity;
  };
  std::vector<Slot> slots_;
  SgdConfig cfg_;
};

// Euclidean norm of the accumulated gradients of a group, for training logs.
double group_grad_norm(const ParamGroup& group);

}  // namespace slca

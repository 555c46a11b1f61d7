#include "slca/sgd.hpp"

#include <cmath>

#include "slca/errors.hpp"

namespace slca {

SgdOptimizer::SgdOptimizer(const std::vector<ParamGroup>& groups,
                           SgdConfig cfg)
    : cfg_(cfg) {
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0)
    throw ContractViolation("sgd: momentum must be in [0, 1)");
  if (cfg.weight_decay < 0.0)
    throw ContractViolation("sgd: weight decay must be nonnegative");
  for (const ParamGroup& g : groups)
    for (const Tensor& p : g.members) {
      if (!p.defined()) throw ContractViolation("sgd: undefined parameter");
      slots_.push_back({p, g.lr, std::vector<double>(p.numel(), 0.0)});
    }
}

void SgdOptimizer::step() {
  for (Slot& s : slots_) {
    if (s.lr == 0.0 || !s.param.requires_grad()) continue;
    const auto& g = s.param.grad();
    auto& p = s.param.mutable_values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double update = g[i] + cfg_.weight_decay * p[i];
      s.velocity[i] = cfg_.momentum * s.velocity[i] + update;
      p[i] -= s.lr * s.velocity[i];
    }
  }
}

void SgdOptimizer::zero_grad() {
  for (Slot& s : slots_) s.param.zero_grad();
}

double group_grad_norm(const ParamGroup& group) {
  double sq = 0.0;
  for (const Tensor& p : group.members) {
    if (!p.requires_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

}  // namespace slca

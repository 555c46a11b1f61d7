#include "slca/lora.hpp"

#include <cmath>
#include <string>

#include "slca/errors.hpp"
#include "slca/linalg.hpp"

namespace slca {

void attach_lora(Model& model, const std::vector<std::size_t>& block_indices,
                 std::size_t k, RngState& rng) {
  std::vector<std::size_t> targets = block_indices;
  if (targets.empty())
    for (std::size_t i = 0; i < model.blocks().size(); ++i)
      targets.push_back(i);
  for (std::size_t idx : targets) {
    if (idx >= model.blocks().size())
      throw ContractViolation("attach_lora: block " + std::to_string(idx) +
                              " out of range");
    Block& blk = model.blocks()[idx];
    if (blk.adapter)
      throw ContractViolation("attach_lora: block " + std::to_string(idx) +
                              " already has an adapter");
    const std::size_t out = blk.linear.weight.rows();
    const std::size_t in = blk.linear.weight.cols();
    if (k < 1 || k > std::min(in, out))
      throw ContractViolation("attach_lora: rank " + std::to_string(k) +
                              " outside [1, " +
                              std::to_string(std::min(in, out)) + "]");
    LoraAdapter ad;
    ad.rank = k;
    std::vector<double> a(k * in);
    fill_normal(rng, a.data(), a.size());
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : a) v *= scale;
    ad.a = Tensor({k, in}, std::move(a), true);
    ad.b = Tensor::zeros({out, k}, true);
    blk.adapter = std::move(ad);
    blk.linear.weight.set_requires_grad(false);
  }
}

void svd_init(Model& model) {
  bool any = false;
  for (Block& blk : model.blocks()) {
    if (!blk.adapter) continue;
    any = true;
    SvdTopK top = svd_topk(blk.linear.weight, blk.adapter->rank);
    blk.adapter->a = Tensor(top.v.shape(), top.v.values(), true);
    blk.adapter->b =
        Tensor::zeros({blk.linear.weight.rows(), blk.adapter->rank}, true);
  }
  if (!any) throw ContractViolation("svd_init: no adapters attached");
}

void absorb(Model& model, std::size_t block_index) {
  if (block_index >= model.blocks().size())
    throw ContractViolation("absorb: block " + std::to_string(block_index) +
                            " out of range");
  Block& blk = model.blocks()[block_index];
  if (!blk.adapter)
    throw ContractViolation("absorb: block " + std::to_string(block_index) +
                            " is already plain");
  const std::size_t out = blk.linear.weight.rows();
  const std::size_t in = blk.linear.weight.cols();
  const std::size_t k = blk.adapter->rank;
  const auto& av = blk.adapter->a.values();
  const auto& bv = blk.adapter->b.values();
  auto& wv = blk.linear.weight.mutable_values();
  for (std::size_t r = 0; r < out; ++r)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double brk = bv[r * k + kk];
      if (brk == 0.0) continue;
      const double* arow = &av[kk * in];
      double* wrow = &wv[r * in];
      for (std::size_t c = 0; c < in; ++c) wrow[c] += brk * arow[c];
    }
  blk.adapter.reset();
  blk.linear.weight.set_requires_grad(true);
}

void absorb_all(Model& model) {
  bool any = false;
  for (std::size_t i = 0; i < model.blocks().size(); ++i) {
    if (model.blocks()[i].adapter) {
      absorb(model, i);
      any = true;
    }
  }
  if (!any) throw ContractViolation("absorb_all: no adapters attached");
}

}  // namespace slca

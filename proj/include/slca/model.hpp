#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "slca/rng.hpp"
#include "slca/tensor.hpp"

namespace slca {

enum class Activation { kRelu, kGelu };

struct LinearLayer {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]
};

struct LayerNormLayer {
  Tensor gamma;  // [dim]
  Tensor beta;   // [dim]
};

// Low-rank delta on a linear layer: effective weight is W + B A. While an
// adapter is attached the base weight is frozen (requires_grad off).
struct LoraAdapter {
  Tensor a;  // [k x in]
  Tensor b;  // [out x k], zero at attach time
  std::size_t rank = 0;
};

struct Block {
  LinearLayer linear;
  LayerNormLayer norm;
  bool apply_activation = true;  // final block: norm only
  std::optional<LoraAdapter> adapter;
};

// Growing classifier. Row r scores class class_ids[r]; rows of one task are
// contiguous and appended in arrival order.
struct Head {
  Tensor weight;  // [width x dim]
  Tensor bias;    // [width]
  std::vector<int> class_ids;
  std::vector<int> task_of_row;
  std::size_t dim = 0;

  std::size_t width() const { return class_ids.size(); }
  bool has_class(int class_id) const;
  // First row carrying this class id (domain growth can repeat ids).
  std::size_t row_of(int class_id) const;
  Head clone() const;
};

struct ParamGroup {
  std::string name;
  double lr = 0.0;
  std::vector<Tensor> members;
};

// Learning-rate constants for the training modes. Defaults are the method's
// published operating point.
struct Rates {
  double backbone = 1e-4;  // slow representation rate
  double head = 1e-2;      // classifier rate
  double hybrid = 1e-3;    // adapter/bias/norm rate in hybrid mode
  double seqft = 5e-3;     // uniform baseline rate
};

struct GroupSpec {
  enum class Kind { kSeqFt, kSlowLearner, kFixedBackbone, kHybrid, kSubset };
  Kind kind = Kind::kSlowLearner;
  // kSubset only: "attn" (even linear layers), "mlp" (odd linear layers),
  // "norm", "bias".
  std::string subset;
};

class Model {
 public:
  Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  std::vector<Block>& blocks() { return blocks_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  Activation activation() const { return act_; }
  std::size_t input_dim() const;
  std::size_t feature_dim() const;

  bool has_head() const { return head_.dim != 0; }
  Head& head() { return head_; }
  const Head& head() const { return head_; }
  void set_head(Head h) { head_ = std::move(h); }
  void drop_head();

  std::vector<ParamGroup>& groups() { return groups_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }
  void set_groups(std::vector<ParamGroup> g) { groups_ = std::move(g); }

  // [n x input_dim] -> [n x feature_dim]; builds a tape only when grads are
  // enabled and some parameter requires them.
  Tensor forward_features(const Tensor& x) const;
  // Features through the head; no head or empty head is a contract
  // violation.
  Tensor forward_logits(const Tensor& x) const;

  std::vector<std::pair<std::string, Tensor>> named_params() const;
  std::vector<Tensor> backbone_params() const;

  Model clone() const;

  friend Model build_model(const std::vector<std::size_t>& dims,
                           Activation act, RngState& rng);

 private:
  std::vector<Block> blocks_;
  Activation act_ = Activation::kGelu;
  Head head_;
  std::vector<ParamGroup> groups_;
};

// MLP backbone from layer widths {input, hidden..., feature}: each block is
// linear -> layer-norm -> activation, the last block skips the activation.
// Weights are Kaiming-uniform in the given stream, biases zero, norm affine
// at identity. Fewer than two widths or a zero width is a contract
// violation.
Model build_model(const std::vector<std::size_t>& dims, Activation act,
                  RngState& rng);

// Appends one task's classes to the head. New weight rows are N(0, 0.01^2),
// new bias entries zero; existing rows are preserved bit-exactly. Duplicate
// class ids (new or already present) and non-increasing task ids are
// contract violations.
void extend_head(Model& model, const std::vector<int>& class_ids, int task_id,
                 RngState& rng);

// Domain-incremental growth: registers the same class set again as a new
// block owned by task_id. The class list must match the first block's
// exactly; ids new to the head are rejected.
void extend_head_domain(Model& model, const std::vector<int>& class_ids,
                        int task_id, RngState& rng);

// Builds the named parameter groups for a training mode and records them on
// the model. lr = 0 marks a frozen group. Hybrid without any attached
// adapter and unknown subset names are contract violations.
std::vector<ParamGroup> make_groups(Model& model, const GroupSpec& spec,
                                    const Rates& rates);

// Binary checkpoint: architecture, adapters, head layout, group names and
// rates, and raw parameter bytes. load(save(m)) is bit-exact.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace slca

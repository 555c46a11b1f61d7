#include "slca/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>

#include "slca/errors.hpp"

namespace slca {

namespace {

Tensor kaiming_uniform(std::size_t out, std::size_t in, RngState& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  std::vector<double> w(out * in);
  fill_uniform(rng, w.data(), w.size(), -bound, bound);
  return Tensor({out, in}, std::move(w), true);
}

}  // namespace

// ---------------------------------------------------------------------------
// Head
// ---------------------------------------------------------------------------

bool Head::has_class(int class_id) const {
  return std::find(class_ids.begin(), class_ids.end(), class_id) !=
         class_ids.end();
}

std::size_t Head::row_of(int class_id) const {
  auto it = std::find(class_ids.begin(), class_ids.end(), class_id);
  if (it == class_ids.end())
    throw ContractViolation("head: class " + std::to_string(class_id) +
                            " not registered");
  return static_cast<std::size_t>(it - class_ids.begin());
}

Head Head::clone() const {
  Head h;
  h.weight = weight.defined() ? weight.clone() : Tensor();
  h.bias = bias.defined() ? bias.clone() : Tensor();
  h.class_ids = class_ids;
  h.task_of_row = task_of_row;
  h.dim = dim;
  return h;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

std::size_t Model::input_dim() const {
  if (blocks_.empty()) throw ContractViolation("model: no blocks");
  return blocks_.front().linear.weight.cols();
}

std::size_t Model::feature_dim() const {
  if (blocks_.empty()) throw ContractViolation("model: no blocks");
  return blocks_.back().linear.weight.rows();
}

void Model::drop_head() { head_ = Head{}; }

Tensor Model::forward_features(const Tensor& x) const {
  if (blocks_.empty()) throw ContractViolation("forward_features: no blocks");
  if (x.rank() != 2 || x.cols() != input_dim())
    throw ContractViolation("forward_features: input must be [n x " +
                            std::to_string(input_dim()) + "]");
  Tensor h = x;
  for (const Block& blk : blocks_) {
    Tensor z = linear(h, blk.linear.weight, blk.linear.bias);
    if (blk.adapter) {
      // x (W + B A)^T = x W^T + (x A^T) B^T
      Tensor low = matmul(h, transpose(blk.adapter->a));
      z = add(z, matmul(low, transpose(blk.adapter->b)));
    }
    z = layer_norm(z, blk.norm.gamma, blk.norm.beta);
    h = blk.apply_activation
            ? (act_ == Activation::kGelu ? gelu(z) : relu(z))
            : z;
  }
  return h;
}

Tensor Model::forward_logits(const Tensor& x) const {
  if (!has_head() || head_.width() == 0)
    throw ContractViolation("forward_logits: head has no classes");
  return linear(forward_features(x), head_.weight, head_.bias);
}

std::vector<std::pair<std::string, Tensor>> Model::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "block" + std::to_string(i);
    const Block& b = blocks_[i];
    out.emplace_back(p + ".weight", b.linear.weight);
    out.emplace_back(p + ".bias", b.linear.bias);
    out.emplace_back(p + ".norm.gamma", b.norm.gamma);
    out.emplace_back(p + ".norm.beta", b.norm.beta);
    if (b.adapter) {
      out.emplace_back(p + ".lora.a", b.adapter->a);
      out.emplace_back(p + ".lora.b", b.adapter->b);
    }
  }
  if (has_head()) {
    out.emplace_back("head.weight", head_.weight);
    out.emplace_back("head.bias", head_.bias);
  }
  return out;
}

std::vector<Tensor> Model::backbone_params() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named_params())
    if (name.rfind("head.", 0) != 0) out.push_back(t);
  return out;
}

Model Model::clone() const {
  Model m;
  m.act_ = act_;
  for (const Block& b : blocks_) {
    Block c;
    c.linear.weight = b.linear.weight.clone();
    c.linear.bias = b.linear.bias.clone();
    c.norm.gamma = b.norm.gamma.clone();
    c.norm.beta = b.norm.beta.clone();
    c.apply_activation = b.apply_activation;
    if (b.adapter)
      c.adapter = LoraAdapter{b.adapter->a.clone(), b.adapter->b.clone(),
                              b.adapter->rank};
    m.blocks_.push_back(std::move(c));
  }
  m.head_ = head_.clone();
  // Groups reference the original tensors; they do not transfer.
  return m;
}

// ---------------------------------------------------------------------------
// Construction and head growth
// ---------------------------------------------------------------------------

Model build_model(const std::vector<std::size_t>& dims, Activation act,
                  RngState& rng) {
  if (dims.size() < 2)
    throw ContractViolation("build_model: need at least input and feature "
                            "widths");
  for (std::size_t d : dims)
    if (d == 0) throw ContractViolation("build_model: zero layer width");
  Model m;
  m.act_ = act;
  for (std::size_t i = 1; i < dims.size(); ++i) {
    Block b;
    b.linear.weight = kaiming_uniform(dims[i], dims[i - 1], rng);
    b.linear.bias = Tensor::zeros({dims[i]}, true);
    b.norm.gamma = Tensor::full({dims[i]}, 1.0, true);
    b.norm.beta = Tensor::zeros({dims[i]}, true);
    b.apply_activation = (i + 1 < dims.size());
    m.blocks_.push_back(std::move(b));
  }
  return m;
}

namespace {

void append_head_rows(Head& head, const std::vector<int>& class_ids,
                      int task_id, std::size_t dim, RngState& rng) {
  const std::size_t old_w = head.width();
  const std::size_t add = class_ids.size();
  std::vector<double> w((old_w + add) * dim);
  std::vector<double> b(old_w + add, 0.0);
  if (old_w > 0) {
    std::copy(head.weight.values().begin(), head.weight.values().end(),
              w.begin());
    std::copy(head.bias.values().begin(), head.bias.values().end(),
              b.begin());
  }
  std::vector<double> fresh(add * dim);
  fill_normal(rng, fresh.data(), fresh.size());
  for (std::size_t i = 0; i < fresh.size(); ++i)
    w[old_w * dim + i] = 0.01 * fresh[i];
  head.weight = Tensor({old_w + add, dim}, std::move(w), true);
  head.bias = Tensor({old_w + add}, std::move(b), true);
  head.class_ids.insert(head.class_ids.end(), class_ids.begin(),
                        class_ids.end());
  head.task_of_row.insert(head.task_of_row.end(), add, task_id);
  head.dim = dim;
}

void check_task_order(const Head& head, int task_id) {
  if (!head.task_of_row.empty() && task_id <= head.task_of_row.back())
    throw ContractViolation("extend_head: task id " + std::to_string(task_id) +
                            " does not follow " +
                            std::to_string(head.task_of_row.back()));
}

}  // namespace

void extend_head(Model& model, const std::vector<int>& class_ids, int task_id,
                 RngState& rng) {
  if (class_ids.empty())
    throw ContractViolation("extend_head: empty class list");
  std::set<int> fresh(class_ids.begin(), class_ids.end());
  if (fresh.size() != class_ids.size())
    throw ContractViolation("extend_head: duplicate class id in task");
  Head& head = model.head();
  for (int id : class_ids)
    if (head.has_class(id))
      throw ContractViolation("extend_head: class " + std::to_string(id) +
                              " already registered");
  check_task_order(head, task_id);
  append_head_rows(head, class_ids, task_id, model.feature_dim(), rng);
}

void extend_head_domain(Model& model, const std::vector<int>& class_ids,
                        int task_id, RngState& rng) {
  if (class_ids.empty())
    throw ContractViolation("extend_head_domain: empty class list");
  Head& head = model.head();
  check_task_order(head, task_id);
  if (!head.task_of_row.empty()) {
    // Same class list as the first domain block, same order.
    std::vector<int> first;
    for (std::size_t r = 0; r < head.width(); ++r)
      if (head.task_of_row[r] == head.task_of_row.front())
        first.push_back(head.class_ids[r]);
    if (first != class_ids)
      throw ContractViolation(
          "extend_head_domain: class set differs from the first domain");
  }
  append_head_rows(head, class_ids, task_id, model.feature_dim(), rng);
}

// ---------------------------------------------------------------------------
// Parameter groups
// ---------------------------------------------------------------------------

namespace {

void push_backbone(const Model& m, ParamGroup& g) {
  for (const Block& b : m.blocks()) {
    if (b.adapter) {
      g.members.push_back(b.adapter->a);
      g.members.push_back(b.adapter->b);
    } else {
      g.members.push_back(b.linear.weight);
    }
    g.members.push_back(b.linear.bias);
    g.members.push_back(b.norm.gamma);
    g.members.push_back(b.norm.beta);
  }
}

ParamGroup head_group(const Model& m, double lr) {
  ParamGroup g{"head", lr, {}};
  if (m.has_head()) {
    g.members.push_back(m.head().weight);
    g.members.push_back(m.head().bias);
  }
  return g;
}

}  // namespace

std::vector<ParamGroup> make_groups(Model& model, const GroupSpec& spec,
                                    const Rates& rates) {
  std::vector<ParamGroup> groups;
  switch (spec.kind) {
    case GroupSpec::Kind::kSeqFt: {
      ParamGroup all{"all", rates.seqft, {}};
      push_backbone(model, all);
      if (model.has_head()) {
        all.members.push_back(model.head().weight);
        all.members.push_back(model.head().bias);
      }
      groups.push_back(std::move(all));
      break;
    }
    case GroupSpec::Kind::kSlowLearner: {
      ParamGroup bb{"backbone", rates.backbone, {}};
      push_backbone(model, bb);
      groups.push_back(std::move(bb));
      groups.push_back(head_group(model, rates.head));
      break;
    }
    case GroupSpec::Kind::kFixedBackbone: {
      ParamGroup bb{"backbone", 0.0, {}};
      push_backbone(model, bb);
      groups.push_back(std::move(bb));
      groups.push_back(head_group(model, rates.head));
      break;
    }
    case GroupSpec::Kind::kHybrid: {
      bool any_adapter = false;
      for (const Block& b : model.blocks()) any_adapter |= b.adapter.has_value();
      if (!any_adapter)
        throw ContractViolation("make_groups: hybrid mode without adapters");
      ParamGroup tune{"adapter+bias+norm", rates.hybrid, {}};
      ParamGroup frozen{"frozen", 0.0, {}};
      for (const Block& b : model.blocks()) {
        if (b.adapter) {
          tune.members.push_back(b.adapter->a);
          tune.members.push_back(b.adapter->b);
          frozen.members.push_back(b.linear.weight);
        } else {
          frozen.members.push_back(b.linear.weight);
        }
        tune.members.push_back(b.linear.bias);
        tune.members.push_back(b.norm.gamma);
        tune.members.push_back(b.norm.beta);
      }
      groups.push_back(std::move(tune));
      groups.push_back(std::move(frozen));
      groups.push_back(head_group(model, rates.head));
      break;
    }
    case GroupSpec::Kind::kSubset: {
      ParamGroup tune{"subset:" + spec.subset, rates.backbone, {}};
      ParamGroup frozen{"frozen", 0.0, {}};
      const auto& blocks = model.blocks();
      for (std::size_t i = 0; i < blocks.size(); ++i) {
        const Block& b = blocks[i];
        const bool even = (i % 2 == 0);
        bool lin_tuned = false, bias_tuned = false, norm_tuned = false;
        if (spec.subset == "attn")
          lin_tuned = even;
        else if (spec.subset == "mlp")
          lin_tuned = !even;
        else if (spec.subset == "norm")
          norm_tuned = true;
        else if (spec.subset == "bias")
          bias_tuned = true;
        else
          throw ContractViolation("make_groups: unknown subset '" +
                                  spec.subset + "'");
        (lin_tuned ? tune : frozen).members.push_back(b.linear.weight);
        // Linear bias follows its weight for layer subsets; the bias subset
        // collects every bias-like vector (linear bias + norm shift).
        (lin_tuned || bias_tuned ? tune : frozen)
            .members.push_back(b.linear.bias);
        (norm_tuned ? tune : frozen).members.push_back(b.norm.gamma);
        (norm_tuned || bias_tuned ? tune : frozen)
            .members.push_back(b.norm.beta);
      }
      groups.push_back(std::move(tune));
      groups.push_back(std::move(frozen));
      groups.push_back(head_group(model, rates.head));
      break;
    }
  }
  model.set_groups(groups);
  return groups;
}

// ---------------------------------------------------------------------------
// Checkpoint (little-endian binary)
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kMagic = 0x4D434C53;  // "SLCM"
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void put_i32(std::ostream& os, std::int32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void put_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void put_tensor(std::ostream& os, const Tensor& t) {
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(t.values().data()),
           static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::int32_t get_i32(std::istream& is) {
  std::int32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
double get_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::string get_string(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  return s;
}
Tensor get_tensor(std::istream& is, bool requires_grad) {
  const std::uint32_t rank = get_u32(is);
  std::vector<std::size_t> shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = get_u32(is);
    n *= d;
  }
  std::vector<double> data(n);
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw ContractViolation("save_checkpoint: cannot open " + path);
  put_u32(os, kMagic);
  put_u32(os, kVersion);
  put_u32(os, model.activation() == Activation::kGelu ? 1 : 0);
  put_u32(os, static_cast<std::uint32_t>(model.blocks().size()));
  for (const Block& b : model.blocks()) {
    put_u32(os, b.apply_activation ? 1 : 0);
    put_u32(os, b.adapter ? static_cast<std::uint32_t>(b.adapter->rank) : 0);
    put_tensor(os, b.linear.weight);
    put_tensor(os, b.linear.bias);
    put_tensor(os, b.norm.gamma);
    put_tensor(os, b.norm.beta);
    if (b.adapter) {
      put_tensor(os, b.adapter->a);
      put_tensor(os, b.adapter->b);
    }
  }
  put_u32(os, model.has_head() ? 1 : 0);
  if (model.has_head()) {
    const Head& h = model.head();
    put_u32(os, static_cast<std::uint32_t>(h.dim));
    put_u32(os, static_cast<std::uint32_t>(h.width()));
    for (int id : h.class_ids) put_i32(os, id);
    for (int t : h.task_of_row) put_i32(os, t);
    put_tensor(os, h.weight);
    put_tensor(os, h.bias);
  }
  put_u32(os, static_cast<std::uint32_t>(model.groups().size()));
  // Group membership is derived state (make_groups rebuilds it); only the
  // names and rates persist, which keeps save(load(save(m))) identical.
  for (const ParamGroup& g : model.groups()) {
    put_string(os, g.name);
    put_f64(os, g.lr);
  }
  if (!os) throw NumericalFailure("save_checkpoint: write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("load_checkpoint: cannot open " + path);
  if (get_u32(is) != kMagic)
    throw ParseError("load_checkpoint: bad magic in " + path);
  if (get_u32(is) != kVersion)
    throw ParseError("load_checkpoint: unsupported version in " + path);
  Model m;
  const bool gelu_act = get_u32(is) == 1;
  const std::uint32_t nblocks = get_u32(is);
  std::vector<std::size_t> dims;
  for (std::uint32_t i = 0; i < nblocks; ++i) {
    Block b;
    b.apply_activation = get_u32(is) == 1;
    const std::uint32_t rank = get_u32(is);
    b.linear.weight = get_tensor(is, rank == 0);
    b.linear.bias = get_tensor(is, true);
    b.norm.gamma = get_tensor(is, true);
    b.norm.beta = get_tensor(is, true);
    if (rank > 0) {
      LoraAdapter ad;
      ad.rank = rank;
      ad.a = get_tensor(is, true);
      ad.b = get_tensor(is, true);
      b.adapter = std::move(ad);
    }
    if (i == 0) dims.push_back(b.linear.weight.cols());
    dims.push_back(b.linear.weight.rows());
    // Rebuild through a scratch model so block wiring stays in one place.
    m.blocks().push_back(std::move(b));
  }
  Model out;
  {
    // build_model validated the dims on save; reuse its wiring then replace
    // every tensor with the stored ones.
    RngState scratch{0, 0};
    out = build_model(dims, gelu_act ? Activation::kGelu : Activation::kRelu,
                      scratch);
  }
  for (std::uint32_t i = 0; i < nblocks; ++i)
    out.blocks()[i] = std::move(m.blocks()[i]);

  if (get_u32(is) == 1) {
    Head h;
    h.dim = get_u32(is);
    const std::uint32_t width = get_u32(is);
    h.class_ids.resize(width);
    h.task_of_row.resize(width);
    for (auto& id : h.class_ids) id = get_i32(is);
    for (auto& t : h.task_of_row) t = get_i32(is);
    h.weight = get_tensor(is, true);
    h.bias = get_tensor(is, true);
    out.set_head(std::move(h));
  }
  const std::uint32_t ngroups = get_u32(is);
  std::vector<ParamGroup> groups;
  for (std::uint32_t i = 0; i < ngroups; ++i) {
    ParamGroup g;
    g.name = get_string(is);
    g.lr = get_f64(is);
    groups.push_back(std::move(g));
  }
  out.set_groups(std::move(groups));
  if (!is) throw ParseError("load_checkpoint: truncated file " + path);
  return out;
}

}  // namespace slca

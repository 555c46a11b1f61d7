#include "slca/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <unordered_set>

#include "slca/errors.hpp"

namespace slca {

using detail::TensorImpl;

namespace {

thread_local bool g_grad_enabled = true;

std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

[[noreturn]] void bad_shape(const char* op, const Tensor& a) {
  throw ContractViolation(std::string(op) + ": unexpected shape " +
                          shape_str(a.shape()));
}

void require_defined(const char* op, const Tensor& a) {
  if (!a.defined())
    throw ContractViolation(std::string(op) + ": undefined tensor");
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ContractViolation(std::string(op) + ": shape mismatch " +
                            shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
}

void require_rank2(const char* op, const Tensor& a) {
  if (a.rank() != 2) bad_shape(op, a);
}

void ensure_grad_buffer(TensorImpl& t) {
  if (t.grad.size() != t.numel()) t.grad.assign(t.numel(), 0.0);
}

// Builds the output node. With grads off, or no differentiable input, the
// result is a plain value node and the lambda is dropped.
Tensor make_op(const char* op, std::vector<std::size_t> shape,
               std::vector<double> data, const std::vector<Tensor>& inputs,
               std::function<void(TensorImpl&)> bw) {
  bool track = g_grad_enabled;
  if (track) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    track = any;
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->op = op;
  if (track) {
    impl->requires_grad = true;
    impl->leaf = false;
    for (const auto& in : inputs) impl->parents.push_back(in.impl());
    impl->backward_fn = std::move(bw);
  }
  return Tensor::wrap(std::move(impl));
}

// Accumulation guard: parents that do not require grad are skipped.
bool wants_grad(const std::shared_ptr<TensorImpl>& p) {
  return p && p->requires_grad;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor basics
// ---------------------------------------------------------------------------

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data,
               bool requires_grad) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  if (data.size() != n)
    throw ContractViolation("Tensor: data size " +
                            std::to_string(data.size()) +
                            " does not match shape " + shape_str(shape));
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
  if (requires_grad) impl_->grad.assign(n, 0.0);
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value,
                    bool requires_grad) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return Tensor(std::move(shape), std::vector<double>(n, value),
                requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({}, {value}, requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> data, bool requires_grad) {
  return Tensor({rows, cols}, std::move(data), requires_grad);
}

const std::vector<std::size_t>& Tensor::shape() const {
  require_defined("shape", *this);
  return impl_->shape;
}

std::size_t Tensor::numel() const {
  require_defined("numel", *this);
  return impl_->numel();
}

std::size_t Tensor::rank() const {
  require_defined("rank", *this);
  return impl_->shape.size();
}

std::size_t Tensor::rows() const {
  require_rank2("rows", *this);
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  require_rank2("cols", *this);
  return impl_->shape[1];
}

bool Tensor::requires_grad() const {
  return impl_ && impl_->requires_grad;
}

bool Tensor::is_leaf() const { return impl_ && impl_->leaf; }

const std::vector<double>& Tensor::values() const {
  require_defined("values", *this);
  return impl_->data;
}

std::vector<double>& Tensor::mutable_values() {
  require_defined("mutable_values", *this);
  return impl_->data;
}

const std::vector<double>& Tensor::grad() const {
  require_defined("grad", *this);
  if (!impl_->requires_grad)
    throw ContractViolation("grad: tensor does not require grad");
  if (impl_->grad.size() != impl_->numel())
    impl_->grad.assign(impl_->numel(), 0.0);
  return impl_->grad;
}

std::vector<double>& Tensor::mutable_grad() {
  require_defined("mutable_grad", *this);
  if (!impl_->requires_grad)
    throw ContractViolation("mutable_grad: tensor does not require grad");
  if (impl_->grad.size() != impl_->numel())
    impl_->grad.assign(impl_->numel(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  require_defined("zero_grad", *this);
  if (impl_->requires_grad) impl_->grad.assign(impl_->numel(), 0.0);
}

void Tensor::set_requires_grad(bool rg) {
  require_defined("set_requires_grad", *this);
  if (!impl_->leaf)
    throw ContractViolation("set_requires_grad: only valid on leaf tensors");
  impl_->requires_grad = rg;
  if (rg)
    ensure_grad_buffer(*impl_);
  else
    impl_->grad.clear();
}

double Tensor::item() const {
  require_defined("item", *this);
  if (impl_->numel() != 1)
    throw ContractViolation("item: tensor has " +
                            std::to_string(impl_->numel()) + " elements");
  return impl_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  require_rank2("at", *this);
  if (r >= impl_->shape[0] || c >= impl_->shape[1])
    throw ContractViolation("at: index out of range");
  return impl_->data[r * impl_->shape[1] + c];
}

Tensor Tensor::clone() const {
  require_defined("clone", *this);
  return Tensor(impl_->shape, impl_->data, impl_->requires_grad);
}

Tensor Tensor::wrap(std::shared_ptr<TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

// ---------------------------------------------------------------------------
// Grad mode and backward
// ---------------------------------------------------------------------------

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

void backward(Tensor& loss) {
  require_defined("backward", loss);
  if (loss.numel() != 1)
    throw ContractViolation("backward: loss must be scalar, got shape " +
                            shape_str(loss.shape()));
  auto root = loss.impl();
  if (!root->requires_grad) return;  // constant loss: nothing to accumulate

  // Iterative post-order DFS; reversed it yields a valid topological order.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  struct Frame {
    TensorImpl* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorImpl* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && seen.insert(p).second)
        stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  // Interior buffers are scratch for this pass; only leaves accumulate
  // across passes, so a repeated backward adds exactly the same gradient.
  for (TensorImpl* node : order)
    if (!node->leaf) {
      ensure_grad_buffer(*node);
      std::fill(node->grad.begin(), node->grad.end(), 0.0);
    }

  ensure_grad_buffer(*root);
  if (root->leaf)
    root->grad[0] += 1.0;
  else
    root->grad[0] = 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->leaf) continue;
    if (!node->backward_fn)
      throw UnsupportedOperation(std::string("backward: no gradient rule for op '") +
                                 node->op + "'");
    ensure_grad_buffer(*node);
    node->backward_fn(*node);
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace {

Tensor binary_elementwise(const char* op, const Tensor& a, const Tensor& b,
                          double (*fwd)(double, double),
                          void (*bwd)(double ga, double av, double bv,
                                      double* da, double* db)) {
  require_defined(op, a);
  require_defined(op, b);
  require_same_shape(op, a, b);
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i]);
  auto pa = a.impl();
  auto pb = b.impl();
  return make_op(op, a.shape(), std::move(out), {a, b},
                 [pa, pb, bwd](TensorImpl& o) {
                   const std::size_t n = o.numel();
                   const bool wa = wants_grad(pa);
                   const bool wb = wants_grad(pb);
                   if (wa) ensure_grad_buffer(*pa);
                   if (wb) ensure_grad_buffer(*pb);
                   for (std::size_t i = 0; i < n; ++i) {
                     double da = 0.0, db = 0.0;
                     bwd(o.grad[i], pa->data[i], pb->data[i], &da, &db);
                     if (wa) pa->grad[i] += da;
                     if (wb) pb->grad[i] += db;
                   }
                 });
}

Tensor unary_elementwise(const char* op, const Tensor& a,
                         double (*fwd)(double),
                         double (*dfdx)(double x, double fx)) {
  require_defined(op, a);
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  const auto& av = a.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
  auto pa = a.impl();
  return make_op(op, a.shape(), std::move(out), {a},
                 [pa, dfdx](TensorImpl& o) {
                   if (!wants_grad(pa)) return;
                   ensure_grad_buffer(*pa);
                   const std::size_t n = o.numel();
                   for (std::size_t i = 0; i < n; ++i)
                     pa->grad[i] += o.grad[i] * dfdx(pa->data[i], o.data[i]);
                 });
}

constexpr double kInvSqrt2 = 0.7071067811865475244008443621048490393;
constexpr double kInvSqrt2Pi = 0.3989422804014326779399460599343818685;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double, double* da, double* db) {
        *da = g;
        *db = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double, double* da, double* db) {
        *da = g;
        *db = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double x, double y, double* da, double* db) {
        *da = g * y;
        *db = g * x;
      });
}

Tensor add_scalar(const Tensor& a, double s) {
  require_defined("add_scalar", a);
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  const auto& av = a.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i] + s;
  auto pa = a.impl();
  return make_op("add_scalar", a.shape(), std::move(out), {a},
                 [pa](TensorImpl& o) {
                   if (!wants_grad(pa)) return;
                   ensure_grad_buffer(*pa);
                   for (std::size_t i = 0; i < o.numel(); ++i)
                     pa->grad[i] += o.grad[i];
                 });
}

Tensor mul_scalar(const Tensor& a, double s) {
  require_defined("mul_scalar", a);
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  const auto& av = a.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * s;
  auto pa = a.impl();
  return make_op("mul_scalar", a.shape(), std::move(out), {a},
                 [pa, s](TensorImpl& o) {
                   if (!wants_grad(pa)) return;
                   ensure_grad_buffer(*pa);
                   for (std::size_t i = 0; i < o.numel(); ++i)
                     pa->grad[i] += o.grad[i] * s;
                 });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor relu(const Tensor& a) {
  return unary_elementwise(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  return unary_elementwise(
      "gelu", a,
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        const double phi_cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double phi_pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        return phi_cdf + x * phi_pdf;
      });
}

Tensor log(const Tensor& a) {
  return unary_elementwise(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw ContractViolation("matmul: inner dims " + shape_str(a.shape()) +
                            " x " + shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = av[i * k + kk];
      if (aik == 0.0) continue;
      const double* brow = &bv[kk * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  auto pa = a.impl();
  auto pb = b.impl();
  return make_op(
      "matmul", {m, n}, std::move(out), {a, b},
      [pa, pb, m, k, n](TensorImpl& o) {
        if (wants_grad(pa)) {
          ensure_grad_buffer(*pa);
          // dA = G * B^T
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
              double acc = 0.0;
              const double* grow = &o.grad[i * n];
              const double* brow = &pb->data[kk * n];
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              pa->grad[i * k + kk] += acc;
            }
        }
        if (wants_grad(pb)) {
          ensure_grad_buffer(*pb);
          // dB = A^T * G
          for (std::size_t kk = 0; kk < k; ++kk)
            for (std::size_t i = 0; i < m; ++i) {
              const double aik = pa->data[i * k + kk];
              if (aik == 0.0) continue;
              const double* grow = &o.grad[i * n];
              double* brow = &pb->grad[kk * n];
              for (std::size_t j = 0; j < n; ++j) brow[j] += aik * grow[j];
            }
        }
      });
}

Tensor transpose(const Tensor& a) {
  require_defined("transpose", a);
  require_rank2("transpose", a);
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  const auto& av = a.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  auto pa = a.impl();
  return make_op("transpose", {c, r}, std::move(out), {a},
                 [pa, r, c](TensorImpl& o) {
                   if (!wants_grad(pa)) return;
                   ensure_grad_buffer(*pa);
                   for (std::size_t j = 0; j < c; ++j)
                     for (std::size_t i = 0; i < r; ++i)
                       pa->grad[i * c + j] += o.grad[j * r + i];
                 });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_defined("linear", x);
  require_defined("linear", w);
  require_rank2("linear", x);
  require_rank2("linear", w);
  const std::size_t n = x.rows(), d = x.cols(), c = w.rows();
  if (w.cols() != d)
    throw ContractViolation("linear: weight " + shape_str(w.shape()) +
                            " incompatible with input " +
                            shape_str(x.shape()));
  const bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.shape()[0] != c))
    throw ContractViolation("linear: bias shape " + shape_str(b.shape()) +
                            " expected [" + std::to_string(c) + "]");
  std::vector<double> out(n * c, 0.0);
  const auto& xv = x.values();
  const auto& wv = w.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const double* xrow = &xv[i * d];
      const double* wrow = &wv[j * d];
      double acc = 0.0;
      for (std::size_t kk = 0; kk < d; ++kk) acc += xrow[kk] * wrow[kk];
      out[i * c + j] = acc;
    }
  if (has_bias) {
    const auto& bv = b.values();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
  }
  auto px = x.impl();
  auto pw = w.impl();
  auto pb = has_bias ? b.impl() : nullptr;
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_op(
      "linear", {n, c}, std::move(out), inputs,
      [px, pw, pb, n, d, c](TensorImpl& o) {
        if (wants_grad(px)) {
          ensure_grad_buffer(*px);
          // dX = G * W
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              const double g = o.grad[i * c + j];
              if (g == 0.0) continue;
              const double* wrow = &pw->data[j * d];
              double* xrow = &px->grad[i * d];
              for (std::size_t kk = 0; kk < d; ++kk) xrow[kk] += g * wrow[kk];
            }
        }
        if (wants_grad(pw)) {
          ensure_grad_buffer(*pw);
          // dW = G^T * X
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              const double g = o.grad[i * c + j];
              if (g == 0.0) continue;
              const double* xrow = &px->data[i * d];
              double* wrow = &pw->grad[j * d];
              for (std::size_t kk = 0; kk < d; ++kk) wrow[kk] += g * xrow[kk];
            }
        }
        if (wants_grad(pb)) {
          ensure_grad_buffer(*pb);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j)
              pb->grad[j] += o.grad[i * c + j];
        }
      });
}

// ---------------------------------------------------------------------------
// Rowwise ops
// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  require_defined("layer_norm", x);
  require_defined("layer_norm", gamma);
  require_defined("layer_norm", beta);
  require_rank2("layer_norm", x);
  const std::size_t n = x.rows(), d = x.cols();
  if (gamma.rank() != 1 || gamma.shape()[0] != d || beta.rank() != 1 ||
      beta.shape()[0] != d)
    throw ContractViolation("layer_norm: gamma/beta must be [" +
                            std::to_string(d) + "]");
  if (eps <= 0.0) throw ContractViolation("layer_norm: eps must be positive");

  std::vector<double> out(n * d);
  std::vector<double> xhat(n * d);
  std::vector<double> inv_std(n);
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &xv[i * d];
    double m = 0.0;
    for (std::size_t j = 0; j < d; ++j) m += row[j];
    m /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double dv = row[j] - m;
      var += dv * dv;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - m) * is;
      xhat[i * d + j] = h;
      out[i * d + j] = gv[j] * h + bv[j];
    }
  }
  auto px = x.impl();
  auto pg = gamma.impl();
  auto pbeta = beta.impl();
  return make_op(
      "layer_norm", {n, d}, std::move(out), {x, gamma, beta},
      [px, pg, pbeta, n, d, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](TensorImpl& o) {
        const bool wx = wants_grad(px);
        const bool wg = wants_grad(pg);
        const bool wb = wants_grad(pbeta);
        if (wx) ensure_grad_buffer(*px);
        if (wg) ensure_grad_buffer(*pg);
        if (wb) ensure_grad_buffer(*pbeta);
        const double dd = static_cast<double>(d);
        for (std::size_t i = 0; i < n; ++i) {
          const double* g = &o.grad[i * d];
          const double* h = &xhat[i * d];
          if (wg || wb) {
            for (std::size_t j = 0; j < d; ++j) {
              if (wg) pg->grad[j] += g[j] * h[j];
              if (wb) pbeta->grad[j] += g[j];
            }
          }
          if (wx) {
            // dx = inv_std/d * (d*gg - sum(gg) - xhat*sum(gg*xhat)),
            // gg = gamma (.) g
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gg = pg->data[j] * g[j];
              s1 += gg;
              s2 += gg * h[j];
            }
            const double is = inv_std[i];
            double* xg = &px->grad[i * d];
            for (std::size_t j = 0; j < d; ++j) {
              const double gg = pg->data[j] * g[j];
              xg[j] += is / dd * (dd * gg - s1 - h[j] * s2);
            }
          }
        }
      });
}

Tensor softmax_rows(const Tensor& x) {
  require_defined("softmax_rows", x);
  require_rank2("softmax_rows", x);
  const std::size_t n = x.rows(), c = x.cols();
  std::vector<double> out(n * c);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &xv[i * c];
    double m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(row[j] - m);
      out[i * c + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  auto px = x.impl();
  return make_op("softmax_rows", {n, c}, std::move(out), {x},
                 [px, n, c](TensorImpl& o) {
                   if (!wants_grad(px)) return;
                   ensure_grad_buffer(*px);
                   for (std::size_t i = 0; i < n; ++i) {
                     const double* p = &o.data[i * c];
                     const double* g = &o.grad[i * c];
                     double dot = 0.0;
                     for (std::size_t j = 0; j < c; ++j) dot += g[j] * p[j];
                     double* xg = &px->grad[i * c];
                     for (std::size_t j = 0; j < c; ++j)
                       xg[j] += p[j] * (g[j] - dot);
                   }
                 });
}

Tensor log_softmax_rows(const Tensor& x) {
  require_defined("log_softmax_rows", x);
  require_rank2("log_softmax_rows", x);
  const std::size_t n = x.rows(), c = x.cols();
  std::vector<double> out(n * c);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &xv[i * c];
    double m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - m);
    const double lz = std::log(z) + m;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lz;
  }
  auto px = x.impl();
  return make_op("log_softmax_rows", {n, c}, std::move(out), {x},
                 [px, n, c](TensorImpl& o) {
                   if (!wants_grad(px)) return;
                   ensure_grad_buffer(*px);
                   for (std::size_t i = 0; i < n; ++i) {
                     const double* lw = &o.data[i * c];
                     const double* g = &o.grad[i * c];
                     double gs = 0.0;
                     for (std::size_t j = 0; j < c; ++j) gs += g[j];
                     double* xg = &px->grad[i * c];
                     for (std::size_t j = 0; j < c; ++j)
                       xg[j] += g[j] - std::exp(lw[j]) * gs;
                   }
                 });
}

Tensor logit_normalize(const Tensor& x, double tau) {
  require_defined("logit_normalize", x);
  require_rank2("logit_normalize", x);
  if (tau <= 0.0)
    throw ContractViolation("logit_normalize: tau must be positive");
  const std::size_t n = x.rows(), c = x.cols();
  std::vector<double> out(n * c);
  std::vector<double> norms(n);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &xv[i * c];
    double sq = 0.0;
    for (std::size_t j = 0; j < c; ++j) sq += row[j] * row[j];
    const double r = std::sqrt(sq);
    if (r == 0.0)
      throw DegenerateInput("logit_normalize: zero logit row at index " +
                            std::to_string(i));
    norms[i] = r;
    const double inv = 1.0 / (tau * r);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] * inv;
  }
  auto px = x.impl();
  return make_op(
      "logit_normalize", {n, c}, std::move(out), {x},
      [px, n, c, tau, norms = std::move(norms)](TensorImpl& o) {
        if (!wants_grad(px)) return;
        ensure_grad_buffer(*px);
        for (std::size_t i = 0; i < n; ++i) {
          const double* xr = &px->data[i * c];
          const double* g = &o.grad[i * c];
          const double r = norms[i];
          double gx = 0.0;
          for (std::size_t j = 0; j < c; ++j) gx += g[j] * xr[j];
          const double inv = 1.0 / (tau * r);
          double* xg = &px->grad[i * c];
          for (std::size_t j = 0; j < c; ++j)
            xg[j] += inv * (g[j] - xr[j] * gx / (r * r));
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  require_defined("sum", a);
  double s = 0.0;
  for (double v : a.values()) s += v;
  auto pa = a.impl();
  return make_op("sum", {}, {s}, {a}, [pa](TensorImpl& o) {
    if (!wants_grad(pa)) return;
    ensure_grad_buffer(*pa);
    const double g = o.grad[0];
    for (double& v : pa->grad) v += g;
  });
}

Tensor mean(const Tensor& a) {
  require_defined("mean", a);
  const std::size_t n = a.numel();
  if (n == 0) throw ContractViolation("mean: empty tensor");
  double s = 0.0;
  for (double v : a.values()) s += v;
  s /= static_cast<double>(n);
  auto pa = a.impl();
  return make_op("mean", {}, {s}, {a}, [pa, n](TensorImpl& o) {
    if (!wants_grad(pa)) return;
    ensure_grad_buffer(*pa);
    const double g = o.grad[0] / static_cast<double>(n);
    for (double& v : pa->grad) v += g;
  });
}

Tensor l2_norm(const Tensor& a) {
  require_defined("l2_norm", a);
  double sq = 0.0;
  for (double v : a.values()) sq += v * v;
  const double r = std::sqrt(sq);
  auto pa = a.impl();
  return make_op("l2_norm", {}, {r}, {a}, [pa, r](TensorImpl& o) {
    if (!wants_grad(pa) || r == 0.0) return;
    ensure_grad_buffer(*pa);
    const double g = o.grad[0] / r;
    for (std::size_t i = 0; i < pa->data.size(); ++i)
      pa->grad[i] += g * pa->data[i];
  });
}

// ---------------------------------------------------------------------------
// Slicing / concat
// ---------------------------------------------------------------------------

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_defined("slice_rows", x);
  require_rank2("slice_rows", x);
  const std::size_t n = x.rows(), c = x.cols();
  if (begin + count > n || count == 0)
    throw ContractViolation("slice_rows: range [" + std::to_string(begin) +
                            ", " + std::to_string(begin + count) +
                            ") outside " + std::to_string(n) + " rows");
  std::vector<double> out(x.values().begin() + begin * c,
                          x.values().begin() + (begin + count) * c);
  auto px = x.impl();
  return make_op("slice_rows", {count, c}, std::move(out), {x},
                 [px, begin, c](TensorImpl& o) {
                   if (!wants_grad(px)) return;
                   ensure_grad_buffer(*px);
                   for (std::size_t i = 0; i < o.numel(); ++i)
                     px->grad[begin * c + i] += o.grad[i];
                 });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_defined("slice_cols", x);
  require_rank2("slice_cols", x);
  const std::size_t n = x.rows(), c = x.cols();
  if (begin + count > c || count == 0)
    throw ContractViolation("slice_cols: range [" + std::to_string(begin) +
                            ", " + std::to_string(begin + count) +
                            ") outside " + std::to_string(c) + " cols");
  std::vector<double> out(n * count);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < count; ++j)
      out[i * count + j] = xv[i * c + begin + j];
  auto px = x.impl();
  return make_op("slice_cols", {n, count}, std::move(out), {x},
                 [px, begin, count, c, n](TensorImpl& o) {
                   if (!wants_grad(px)) return;
                   ensure_grad_buffer(*px);
                   for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t j = 0; j < count; ++j)
                       px->grad[i * c + begin + j] += o.grad[i * count + j];
                 });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractViolation("concat_rows: no parts");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank2("concat_rows", p);
    if (p.cols() != c)
      throw ContractViolation("concat_rows: column mismatch");
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * c);
  for (const auto& p : parts)
    out.insert(out.end(), p.values().begin(), p.values().end());
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  return make_op("concat_rows", {total, c}, std::move(out), parts,
                 [impls](TensorImpl& o) {
                   std::size_t off = 0;
                   for (const auto& p : impls) {
                     const std::size_t n = p->numel();
                     if (wants_grad(p)) {
                       ensure_grad_buffer(*p);
                       for (std::size_t i = 0; i < n; ++i)
                         p->grad[i] += o.grad[off + i];
                     }
                     off += n;
                   }
                 });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractViolation("concat_cols: no parts");
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank2("concat_cols", p);
    if (p.rows() != n) throw ContractViolation("concat_cols: row mismatch");
    total += p.cols();
  }
  std::vector<double> out(n * total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.cols();
    const auto& pv = p.values();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < pc; ++j)
        out[i * total + off + j] = pv[i * pc + j];
    off += pc;
  }
  std::vector<std::shared_ptr<TensorImpl>> impls;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    impls.push_back(p.impl());
    widths.push_back(p.cols());
  }
  return make_op("concat_cols", {n, total}, std::move(out), parts,
                 [impls, widths, n, total](TensorImpl& o) {
                   std::size_t off = 0;
                   for (std::size_t k = 0; k < impls.size(); ++k) {
                     const auto& p = impls[k];
                     const std::size_t pc = widths[k];
                     if (wants_grad(p)) {
                       ensure_grad_buffer(*p);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < pc; ++j)
                           p->grad[i * pc + j] += o.grad[i * total + off + j];
                     }
                     off += pc;
                   }
                 });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  require_defined("gather_rows", x);
  require_rank2("gather_rows", x);
  const std::size_t n = x.rows(), c = x.cols();
  std::vector<double> out(idx.size() * c);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n)
      throw ContractViolation("gather_rows: index " + std::to_string(idx[i]) +
                              " out of " + std::to_string(n));
    std::copy_n(&xv[idx[i] * c], c, &out[i * c]);
  }
  auto px = x.impl();
  return make_op("gather_rows", {idx.size(), c}, std::move(out), {x},
                 [px, idx, c](TensorImpl& o) {
                   if (!wants_grad(px)) return;
                   ensure_grad_buffer(*px);
                   for (std::size_t i = 0; i < idx.size(); ++i)
                     for (std::size_t j = 0; j < c; ++j)
                       px->grad[idx[i] * c + j] += o.grad[i * c + j];
                 });
}

Tensor select_per_row(const Tensor& x, const std::vector<std::size_t>& col) {
  require_defined("select_per_row", x);
  require_rank2("select_per_row", x);
  const std::size_t n = x.rows(), c = x.cols();
  if (col.size() != n)
    throw ContractViolation("select_per_row: need one column per row");
  std::vector<double> out(n);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    if (col[i] >= c)
      throw ContractViolation("select_per_row: column " +
                              std::to_string(col[i]) + " out of " +
                              std::to_string(c));
    out[i] = xv[i * c + col[i]];
  }
  auto px = x.impl();
  return make_op("select_per_row", {n}, std::move(out), {x},
                 [px, col, c](TensorImpl& o) {
                   if (!wants_grad(px)) return;
                   ensure_grad_buffer(*px);
                   for (std::size_t i = 0; i < col.size(); ++i)
                     px->grad[i * c + col[i]] += o.grad[i];
                 });
}

namespace detail {

Tensor make_opaque(const std::vector<Tensor>& inputs,
                   std::vector<std::size_t> shape, std::vector<double> data) {
  return make_op("opaque", std::move(shape), std::move(data), inputs,
                 nullptr);
}

}  // namespace detail

}  // namespace slca

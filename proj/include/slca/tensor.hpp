#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

namespace slca {

namespace detail {

struct TensorImpl {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  bool requires_grad = false;
  bool leaf = true;
  // Sized to numel for leaves that require grad, lazily for interior nodes.
  std::vector<double> grad;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  // Reads this->grad, accumulates into parents' grads. Null on leaves and on
  // opaque forward-only nodes.
  std::function<void(TensorImpl&)> backward_fn;
  const char* op = "leaf";

  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }
};

}  // namespace detail

// Dense rank-n array of doubles. Handles share one impl, so copies alias;
// clone() is the deep copy. Values are written only at construction and
// through mutable_values() between graph builds (optimizer updates); nodes
// inside a live graph are never mutated.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data,
         bool requires_grad = false);

  static Tensor zeros(std::vector<std::size_t> shape,
                      bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> data, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t numel() const;
  std::size_t rank() const;
  std::size_t rows() const;  // rank-2 only
  std::size_t cols() const;  // rank-2 only
  bool requires_grad() const;
  bool is_leaf() const;

  const std::vector<double>& values() const;
  // For parameter updates between graph builds. Mutating a node that sits
  // inside a graph you still intend to run backward on is undefined.
  std::vector<double>& mutable_values();
  const std::vector<double>& grad() const;
  // Direct gradient edits (masking); requires_grad only.
  std::vector<double>& mutable_grad();
  void zero_grad();
  void set_requires_grad(bool rg);

  double item() const;                              // scalar only
  double at(std::size_t r, std::size_t c) const;    // rank-2 only

  // Deep copy of values; drops any graph linkage, keeps requires_grad.
  Tensor clone() const;

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Thread-local graph switch. While a guard is alive every op produces plain
// value nodes, so evaluation passes cost no tape.
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

// Reverse pass from a scalar loss. Seeds d(loss)/d(loss) = 1 and accumulates
// (+=) into the grad of every reachable leaf with requires_grad; interior
// buffers are per-pass scratch, so repeating the call adds exactly the same
// gradient again until zero_grad. Tensors that never participated keep their
// zero fill.
void backward(Tensor& loss);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);   // exact erf form
Tensor log(const Tensor& a);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x [n x d] * W^T [d x c] + b, bias broadcast over rows; pass an undefined
// Tensor to skip the bias.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// ---- rowwise ----
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);  // max-shifted, stable
// x_ij / (tau * ||x_i||). Zero row -> DegenerateInput, tau <= 0 -> contract.
Tensor logit_normalize(const Tensor& x, double tau);

// ---- reductions (scalar output) ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor l2_norm(const Tensor& a);

// ---- slicing / concat ----
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx);
// out[i] = x[i, col[i]], shape [n].
Tensor select_per_row(const Tensor& x, const std::vector<std::size_t>& col);

namespace detail {
// Interior node with parents but no gradient rule; lets callers splice
// forward-only composites into a graph. backward() through one throws
// UnsupportedOperation.
Tensor make_opaque(const std::vector<Tensor>& inputs,
                   std::vector<std::size_t> shape, std::vector<double> data);
}  // namespace detail

}  // namespace slca

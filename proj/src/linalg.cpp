#include "slca/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "slca/errors.hpp"

namespace slca {

namespace {

void require_square(const char* op, const Tensor& s) {
  if (s.rank() != 2 || s.rows() != s.cols())
    throw ContractViolation(std::string(op) + ": matrix must be square");
}

}  // namespace

Tensor cholesky(const Tensor& s) {
  require_square("cholesky", s);
  const std::size_t d = s.rows();
  const auto& a = s.values();

  double scale = 0.0;
  for (double v : a) scale = std::max(scale, std::fabs(v));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j)
      if (std::fabs(a[i * d + j] - a[j * d + i]) > 1e-9 * std::max(1.0, scale))
        throw ContractViolation("cholesky: matrix is not symmetric at (" +
                                std::to_string(i) + "," + std::to_string(j) +
                                ")");

  std::vector<double> l(d * d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double diag = a[j * d + j];
    for (std::size_t k = 0; k < j; ++k) diag -= l[j * d + k] * l[j * d + k];
    if (diag <= 0.0)
      throw NotPositiveDefinite("cholesky: pivot " + std::to_string(j) +
                                " is " + std::to_string(diag));
    const double ljj = std::sqrt(diag);
    l[j * d + j] = ljj;
    for (std::size_t i = j + 1; i < d; ++i) {
      double v = a[i * d + j];
      for (std::size_t k = 0; k < j; ++k) v -= l[i * d + k] * l[j * d + k];
      l[i * d + j] = v / ljj;
    }
  }
  return Tensor::matrix(d, d, std::move(l));
}

SvdTopK svd_topk(const Tensor& w, std::size_t k) {
  if (w.rank() != 2) throw ContractViolation("svd_topk: W must be rank 2");
  const std::size_t d2 = w.rows(), d1 = w.cols();
  const std::size_t kmax = std::min(d1, d2);
  if (k < 1 || k > kmax)
    throw ContractViolation("svd_topk: k = " + std::to_string(k) +
                            " outside [1, " + std::to_string(kmax) + "]");

  // Gram matrix G = W^T W, d1 x d1 symmetric PSD. Its eigenvectors are the
  // right singular vectors of W and its eigenvalues the squared singular
  // values; only V and sigma are needed downstream, so U is never formed.
  const auto& wv = w.values();
  std::vector<double> g(d1 * d1, 0.0);
  for (std::size_t r = 0; r < d2; ++r) {
    const double* row = &wv[r * d1];
    for (std::size_t i = 0; i < d1; ++i) {
      const double wi = row[i];
      if (wi == 0.0) continue;
      for (std::size_t j = i; j < d1; ++j) g[i * d1 + j] += wi * row[j];
    }
  }
  for (std::size_t i = 0; i < d1; ++i)
    for (std::size_t j = 0; j < i; ++j) g[i * d1 + j] = g[j * d1 + i];

  double fro = 0.0;
  for (double v : g) fro += v * v;
  fro = std::sqrt(fro);
  const double tol = 1e-12 * std::max(fro, 1e-300);

  // Cyclic Jacobi: V accumulates the rotations, one sweep visits every
  // off-diagonal pair once.
  std::vector<double> vmat(d1 * d1, 0.0);
  for (std::size_t i = 0; i < d1; ++i) vmat[i * d1 + i] = 1.0;

  const std::size_t max_sweeps = 100 * d1;
  bool converged = false;
  for (std::size_t sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < d1; ++p)
      for (std::size_t q = p + 1; q < d1; ++q)
        off = std::max(off, std::fabs(g[p * d1 + q]));
    if (off <= tol) {
      converged = true;
      break;
    }
    for (std::size_t p = 0; p < d1; ++p) {
      for (std::size_t q = p + 1; q < d1; ++q) {
        const double gpq = g[p * d1 + q];
        if (std::fabs(gpq) <= tol) continue;
        const double gpp = g[p * d1 + p];
        const double gqq = g[q * d1 + q];
        const double theta = (gqq - gpp) / (2.0 * gpq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) +
                          std::sqrt(theta * theta + 1.0));
        const double cs = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * cs;
        for (std::size_t i = 0; i < d1; ++i) {
          const double gip = g[i * d1 + p];
          const double giq = g[i * d1 + q];
          g[i * d1 + p] = cs * gip - sn * giq;
          g[i * d1 + q] = sn * gip + cs * giq;
        }
        for (std::size_t j = 0; j < d1; ++j) {
          const double gpj = g[p * d1 + j];
          const double gqj = g[q * d1 + j];
          g[p * d1 + j] = cs * gpj - sn * gqj;
          g[q * d1 + j] = sn * gpj + cs * gqj;
        }
        for (std::size_t j = 0; j < d1; ++j) {
          const double vpj = vmat[p * d1 + j];
          const double vqj = vmat[q * d1 + j];
          vmat[p * d1 + j] = cs * vpj - sn * vqj;
          vmat[q * d1 + j] = sn * vpj + cs * vqj;
        }
      }
    }
  }
  if (!converged) {
    double off = 0.0;
    for (std::size_t p = 0; p < d1; ++p)
      for (std::size_t q = p + 1; q < d1; ++q)
        off = std::max(off, std::fabs(g[p * d1 + q]));
    if (off > tol)
      throw NumericalFailure(
          "svd_topk: Jacobi did not converge within " +
          std::to_string(max_sweeps) + " sweeps (off-diagonal " +
          std::to_string(off) + ")");
  }

  // Rows of vmat are eigenvectors of G (V is accumulated as V^T applied to
  // rows). Sort by eigenvalue descending, stable for reproducible ties.
  std::vector<std::size_t> idx(d1);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return g[a * d1 + a] > g[b * d1 + b];
  });

  SvdTopK res;
  res.sigma.resize(k);
  std::vector<double> vk(k * d1);
  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t e = idx[r];
    res.sigma[r] = std::sqrt(std::max(g[e * d1 + e], 0.0));
    double* dst = &vk[r * d1];
    for (std::size_t j = 0; j < d1; ++j) dst[j] = vmat[e * d1 + j];
    // Deterministic sign: first entry beyond rounding noise is nonnegative.
    double lead = 0.0;
    for (std::size_t j = 0; j < d1; ++j)
      if (std::fabs(dst[j]) > 1e-12) {
        lead = dst[j];
        break;
      }
    if (lead < 0.0)
      for (std::size_t j = 0; j < d1; ++j) dst[j] = -dst[j];
  }
  res.v = Tensor::matrix(k, d1, std::move(vk));
  return res;
}

Tensor sample_mvn(const Tensor& mu, const Tensor& cov, CovKind kind,
                  std::size_t n, RngState& rng) {
  if (mu.rank() != 1)
    throw ContractViolation("sample_mvn: mu must be a vector");
  if (n == 0) throw ContractViolation("sample_mvn: n must be positive");
  const std::size_t d = mu.shape()[0];
  const auto& m = mu.values();

  std::vector<double> out(n * d);

  if (kind == CovKind::kDiag) {
    if (cov.rank() != 1 || cov.shape()[0] != d)
      throw ContractViolation("sample_mvn: diag cov must be a length-" +
                              std::to_string(d) + " vector");
    std::vector<double> sd(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double v = cov.values()[j];
      if (v < 0.0)
        throw ContractViolation("sample_mvn: negative variance at " +
                                std::to_string(j));
      sd[j] = std::sqrt(v);
    }
    std::vector<double> z(d);
    for (std::size_t i = 0; i < n; ++i) {
      fill_normal(rng, z.data(), d);
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] = m[j] + sd[j] * z[j];
    }
    return Tensor::matrix(n, d, std::move(out));
  }

  require_square("sample_mvn", cov);
  if (cov.rows() != d)
    throw ContractViolation("sample_mvn: cov dim " +
                            std::to_string(cov.rows()) + " vs mu dim " +
                            std::to_string(d));

  // Escalating jitter: plain attempt first, then eps * max(tr(S)/d, 1) * I.
  // The absolute floor keeps a zero-trace matrix recoverable.
  static constexpr double kJitterEps[] = {1e-10, 1e-8, 1e-6};
  double trace = 0.0;
  for (std::size_t j = 0; j < d; ++j) trace += cov.at(j, j);
  const double jitter_scale = std::max(trace / static_cast<double>(d), 1.0);

  Tensor l;
  bool ok = false;
  std::string last_err;
  for (int attempt = 0; attempt < 4 && !ok; ++attempt) {
    Tensor s = cov.clone();
    if (attempt > 0) {
      const double j = kJitterEps[attempt - 1] * jitter_scale;
      auto& sv = s.mutable_values();
      for (std::size_t i = 0; i < d; ++i) sv[i * d + i] += j;
    }
    try {
      l = cholesky(s);
      ok = true;
    } catch (const NotPositiveDefinite& e) {
      last_err = e.what();
    }
  }
  if (!ok)
    throw NumericalFailure(
        "sample_mvn: covariance not positive definite after jitter schedule "
        "(" + last_err + ")");

  const auto& lv = l.values();
  std::vector<double> z(d);
  for (std::size_t i = 0; i < n; ++i) {
    fill_normal(rng, z.data(), d);
    double* row = &out[i * d];
    for (std::size_t r = 0; r < d; ++r) {
      double acc = m[r];
      const double* lrow = &lv[r * d];
      for (std::size_t c = 0; c <= r; ++c) acc += lrow[c] * z[c];
      row[r] = acc;
    }
  }
  return Tensor::matrix(n, d, std::move(out));
}

}  // namespace slca

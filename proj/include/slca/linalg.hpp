#pragma once

#include <cstddef>
#include <vector>

#include "slca/rng.hpp"
#include "slca/tensor.hpp"

namespace slca {

// Lower-triangular factor of a symmetric positive-definite matrix,
// L*L^T = S. Throws NotPositiveDefinite on a failed pivot; recovery via
// jitter is the caller's job (sample_mvn owns the documented schedule).
// Asymmetry beyond 1e-9 relative is a contract violation.
Tensor cholesky(const Tensor& s);

struct SvdTopK {
  // Row i of v is the i-th right singular vector (unit norm, first nonzero
  // entry nonnegative); sigma descending, sigma[i] = ||W v_i||.
  Tensor v;                    // [k x d1]
  std::vector<double> sigma;   // k values
};

// Top-k right singular pairs of W [d2 x d1] (W maps row vectors x [.. x d1]
// through W as x W^T, matching the adapter orientation W + B A).
// Implemented as cyclic Jacobi on the Gram matrix W^T W: sweep cap 100*d1,
// off-diagonal tolerance 1e-12 relative to ||W^T W||_F. Cap exhausted ->
// NumericalFailure; k outside [1, min(d1, d2)] -> contract violation.
SvdTopK svd_topk(const Tensor& w, std::size_t k);

enum class CovKind { kFull, kDiag, kShared };

// Draws n samples from N(mu, cov) into an [n x d] tensor.
//
//   kFull / kShared: cov is [d x d]; samples are mu + L z with L from
//     cholesky. If the plain factorization fails, jitter
//     eps * max(tr(S)/d, 1) * I is added with eps escalating through
//     1e-10, 1e-8, 1e-6; failure after the last step -> NumericalFailure.
//   kDiag: cov is a length-d variance vector; samples are mu + sqrt(v) z,
//     negative variance -> contract violation, zero variance collapses the
//     coordinate onto the mean exactly.
//
// Deterministic in rng.
Tensor sample_mvn(const Tensor& mu, const Tensor& cov, CovKind kind,
                  std::size_t n, RngState& rng);

}  // namespace slca

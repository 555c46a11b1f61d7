#pragma once

#include <cstddef>
#include <vector>

#include "slca/model.hpp"
#include "slca/rng.hpp"

namespace slca {

enum class LoraInit { kSvd, kRandom };

// Attaches rank-k adapters to the listed blocks (empty list = every block).
// The base weight is frozen for the adapter's lifetime. A starts as random
// Gaussian rows scaled so the expected row norm is 1 (comparable to unit
// right singular vectors); B starts at zero, so the adapted forward equals
// the plain forward bit for bit. Attaching twice to a block or k outside
// [1, min(in, out)] is a contract violation.
void attach_lora(Model& model, const std::vector<std::size_t>& block_indices,
                 std::size_t k, RngState& rng);

// Re-initializes A of every attached adapter with the top-k right singular
// rows of its (frozen) base weight; B stays zero. With unit singular rows
// A A^T = I_k up to factorization error.
void svd_init(Model& model);

// Folds W <- W + B A on one block, removes the adapter, and unfreezes the
// weight. Absorbing a plain block is a contract violation.
void absorb(Model& model, std::size_t block_index);

// Absorbs every attached adapter.
void absorb_all(Model& model);

}  // namespace slca

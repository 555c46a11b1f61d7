#pragma once

#include <cstdint>
#include <cstddef>
#include <vector>

namespace slca {

// Counter-based generator: the stream is a pure function of (seed, counter),
// so any draw can be reproduced without replaying the ones before it and the
// state serializes as two integers. The mixer is the splitmix64 finalizer
// applied to seed + counter * golden-ratio increment. Integer outputs are
// bit-exact everywhere; normal variates go through libm (log/sqrt/cos), which
// pins them to the platform's libm rounding, documented as the precision of
// the stream.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;
};

std::uint64_t next_u64(RngState& rng);

// Uniform on [0, 1), 53-bit resolution.
double uniform(RngState& rng);

// Uniform on [lo, hi).
double uniform(RngState& rng, double lo, double hi);

// Uniform integer on [0, n). n = 0 is a contract violation.
std::uint64_t uniform_below(RngState& rng, std::uint64_t n);

// One Box-Muller pair. Consumes exactly two counter steps; u1 is mapped to
// (0, 1] so the log never sees zero.
void normal_pair(RngState& rng, double& z0, double& z1);

// Single standard normal draw (consumes a full pair, discards the second
// half; stateless beyond the counter so the stream stays reproducible).
double normal(RngState& rng);

// Fills out with n standard normal draws, pairwise, consuming
// 2*ceil(n/2) counter steps.
void fill_normal(RngState& rng, double* out, std::size_t n);

void fill_uniform(RngState& rng, double* out, std::size_t n, double lo,
                  double hi);

// Fisher-Yates over idx.
void shuffle(RngState& rng, std::vector<std::size_t>& idx);

// Derives an independent child stream; deterministic in the parent state.
RngState split(RngState& rng);

}  // namespace slca

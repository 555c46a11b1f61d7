#include "slca/rng.hpp"

#include <cmath>

#include "slca/errors.hpp"

namespace slca {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
constexpr double kPi = 3.141592653589793238462643383279502884;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
}  // namespace

std::uint64_t next_u64(RngState& rng) {
  const std::uint64_t z = rng.seed + rng.counter * kGolden;
  ++rng.counter;
  return mix64(z);
}

double uniform(RngState& rng) {
  return static_cast<double>(next_u64(rng) >> 11) * 0x1.0p-53;
}

double uniform(RngState& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform(rng);
}

std::uint64_t uniform_below(RngState& rng, std::uint64_t n) {
  if (n == 0) throw ContractViolation("uniform_below: n must be positive");
  return next_u64(rng) % n;
}

void normal_pair(RngState& rng, double& z0, double& z1) {
  // (0, 1] for the radial draw keeps log finite.
  const double u1 =
      static_cast<double>((next_u64(rng) >> 11) + 1) * 0x1.0p-53;
  const double u2 = uniform(rng);
  const double r = std::sqrt(-2.0 * std::log(u1));
  z0 = r * std::cos(2.0 * kPi * u2);
  z1 = r * std::sin(2.0 * kPi * u2);
}

double normal(RngState& rng) {
  double z0 = 0.0, z1 = 0.0;
  normal_pair(rng, z0, z1);
  return z0;
}

void fill_normal(RngState& rng, double* out, std::size_t n) {
  std::size_t i = 0;
  while (i + 1 < n) {
    normal_pair(rng, out[i], out[i + 1]);
    i += 2;
  }
  if (i < n) out[i] = normal(rng);
}

void fill_uniform(RngState& rng, double* out, std::size_t n, double lo,
                  double hi) {
  for (std::size_t i = 0; i < n; ++i) out[i] = uniform(rng, lo, hi);
}

void shuffle(RngState& rng, std::vector<std::size_t>& idx) {
  if (idx.size() < 2) return;
  for (std::size_t i = idx.size() - 1; i > 0; --i) {
    const std::uint64_t j = uniform_below(rng, i + 1);
    std::swap(idx[i], idx[j]);
  }
}

RngState split(RngState& rng) {
  RngState child;
  child.seed = next_u64(rng);
  child.counter = 0;
  return child;
}

}  // namespace slca

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "uformer/common.hpp"

namespace uformer {

// Deterministic random source. Draws go through hand-rolled uniform and
// Box-Muller transforms instead of std::uniform_real_distribution so that
// streams are reproducible across standard libraries, not just across runs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1). 53 bits of mantissa, standard ldexp construction.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    require(hi >= lo, "uniform range is inverted");
    return lo + (hi - lo) * uniform();
  }

  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi_inclusive) {
    require(hi_inclusive >= lo, "uniform_int range is inverted");
    const auto span = static_cast<std::uint64_t>(hi_inclusive - lo) + 1;
    // Rejection sampling keeps the draw unbiased for spans that do not
    // divide 2^64.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return lo + static_cast<std::int64_t>(r % span);
  }

  // Standard normal via Box-Muller. The spare value is cached, so draws come
  // in deterministic pairs.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Derives an independent stream for a keyed subtask (one per dataset item,
// one per epoch, ...). splitmix64 scrambling keeps nearby keys uncorrelated.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t key) {
  std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (key + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace uformer

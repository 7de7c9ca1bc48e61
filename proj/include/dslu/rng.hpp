#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dslu {

// Derives an independent seed for a named sub-stream ("corpus", "init",
// "dropout", "masking", ...) from a root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

// Seeded generator whose value conversions are fixed here rather than left to
// the standard library distributions, so streams are reproducible across
// toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dslu

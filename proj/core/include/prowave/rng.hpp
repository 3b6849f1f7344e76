#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace prowave {

// Seeded random source whose draws are identical on every platform.
// Distributions are computed here rather than through <random>'s
// implementation-defined distribution classes.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  // Standard normal via Box-Muller, scaled.
  double normal(double mean, double stddev);

  // Engine state as text, suitable for checkpoints.
  std::string state() const;
  void restore(const std::string& state);

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

// FNV-1a, used to derive stable seeds from strings.
std::uint64_t fnv1a(std::string_view text);

}  // namespace prowave

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace egflow {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

/// Seeded generator. Uniform and normal draws are computed here rather than via
/// <random> distributions so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0)
      : engine_(splitmix64(seed)), seed_marker_(splitmix64(seed ^ 0x5DEECE66DULL)) {}

  /// Independent named stream derived from a root seed ("data", "init",
  /// "train", "eval", ...). Drawing from one never perturbs another.
  static Rng stream(std::uint64_t root_seed, std::string_view name);
  /// Child stream keyed by an index, e.g. one per evaluation episode.
  Rng fork(std::uint64_t index) const;

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  float normalf() { return static_cast<float>(normal()); }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_marker_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace egflow

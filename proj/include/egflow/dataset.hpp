#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "egflow/tensor.hpp"

namespace egflow {

/// Offline transitions stored column-wise. Unconditional sample sets (the GMM
/// task) use s_dim = 0 and keep the samples in `a`.
struct OfflineDataset {
  std::size_t s_dim = 0;
  std::size_t a_dim = 0;
  Tensor s;       // [n, s_dim]
  Tensor a;       // [n, a_dim]
  std::vector<float> r;
  Tensor s_next;  // [n, s_dim]
  std::vector<float> done;
  std::uint64_t spec_hash = 0;
  std::uint64_t seed = 0;

  static OfflineDataset empty(std::size_t s_dim, std::size_t a_dim, std::size_t n);
  std::size_t size() const { return r.size(); }
  /// Throws DimensionError / NumericError on inconsistent or non-finite content.
  void validate() const;

  struct Batch {
    Tensor s;
    Tensor a;
    std::vector<float> r;
    Tensor s_next;
    std::vector<float> done;
  };
  Batch gather(std::span<const std::size_t> index) const;

  friend bool operator==(const OfflineDataset&, const OfflineDataset&) = default;
};

/// Writes `dir/manifest.json` and `dir/data.bin` (s, a, r, s', done as
/// little-endian f32, field by field).
void save_dataset(const OfflineDataset& data, const std::filesystem::path& dir);
OfflineDataset load_dataset(const std::filesystem::path& dir);

/// Returns (mean, sd) of the rewards and rewrites them as (r - mean) / sd.
std::pair<double, double> standardize_rewards(OfflineDataset& data);

}  // namespace egflow

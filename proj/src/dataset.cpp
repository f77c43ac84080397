#include "egflow/dataset.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "egflow/binary_io.hpp"
#include "egflow/errors.hpp"

namespace egflow {

OfflineDataset OfflineDataset::empty(std::size_t s_dim, std::size_t a_dim, std::size_t n) {
  OfflineDataset d;
  d.s_dim = s_dim;
  d.a_dim = a_dim;
  d.s = Tensor::matrix(n, s_dim);
  d.a = Tensor::matrix(n, a_dim);
  d.r.assign(n, 0.0f);
  d.s_next = Tensor::matrix(n, s_dim);
  d.done.assign(n, 1.0f);
  return d;
}

void OfflineDataset::validate() const {
  const std::size_t n = r.size();
  auto check = [&](const Tensor& t, std::size_t cols, const char* name) {
    if (t.rank() != 2 || t.rows() != n || t.cols() != cols) {
      throw DimensionError(std::string("dataset field '") + name + "' has shape " + shape_str(t.shape()));
    }
    t.check_finite(name);
  };
  check(s, s_dim, "s");
  check(a, a_dim, "a");
  check(s_next, s_dim, "s_next");
  if (done.size() != n) throw DimensionError("dataset field 'done' length mismatch");
  for (float v : r) {
    if (!std::isfinite(v)) throw NumericError("dataset reward is not finite");
  }
  for (float v : done) {
    if (v != 0.0f && v != 1.0f) throw InputError("dataset done flags must be 0 or 1");
  }
}

OfflineDataset::Batch OfflineDataset::gather(std::span<const std::size_t> index) const {
  Batch b;
  b.s = gather_rows(s, index);
  b.a = gather_rows(a, index);
  b.s_next = gather_rows(s_next, index);
  b.r.reserve(index.size());
  b.done.reserve(index.size());
  for (std::size_t i : index) {
    b.r.push_back(r.at(i));
    b.done.push_back(done.at(i));
  }
  return b;
}

void save_dataset(const OfflineDataset& data, const std::filesystem::path& dir) {
  data.validate();
  std::filesystem::create_directories(dir);
  std::vector<float> blob;
  blob.reserve(data.s.size() * 2 + data.a.size() + data.r.size() * 2);
  blob.insert(blob.end(), data.s.data().begin(), data.s.data().end());
  blob.insert(blob.end(), data.a.data().begin(), data.a.data().end());
  blob.insert(blob.end(), data.r.begin(), data.r.end());
  blob.insert(blob.end(), data.s_next.data().begin(), data.s_next.data().end());
  blob.insert(blob.end(), data.done.begin(), data.done.end());
  const nlohmann::json manifest = {
      {"format", "egd"},
      {"version", 1},
      {"n", data.size()},
      {"s_dim", data.s_dim},
      {"a_dim", data.a_dim},
      {"spec_hash", hex64(data.spec_hash)},
      {"seed", data.seed},
      {"fields", {"s", "a", "r", "s_next", "done"}},
  };
  write_bytes(dir / "data.bin", encode_f32_le(blob));
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

OfflineDataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("dataset directory not found: " + dir.string());
  std::size_t n = 0;
  OfflineDataset d;
  try {
    const auto manifest = nlohmann::json::parse(read_text(dir / "manifest.json"));
    if (manifest.at("format").get<std::string>() != "egd") throw CorruptionError("not an egd manifest");
    n = manifest.at("n").get<std::size_t>();
    d.s_dim = manifest.at("s_dim").get<std::size_t>();
    d.a_dim = manifest.at("a_dim").get<std::size_t>();
    d.spec_hash = std::stoull(manifest.at("spec_hash").get<std::string>(), nullptr, 16);
    d.seed = manifest.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("bad dataset manifest: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw CorruptionError("bad dataset manifest: spec_hash");
  }
  const auto blob = decode_f32_le(read_bytes(dir / "data.bin"));
  const std::size_t expect = n * (2 * d.s_dim + d.a_dim + 2);
  if (blob.size() != expect) {
    throw CorruptionError("dataset payload holds " + std::to_string(blob.size()) + " values, manifest implies " +
                          std::to_string(expect));
  }
  auto it = blob.begin();
  auto take = [&](std::size_t count) {
    std::vector<float> v(it, it + static_cast<std::ptrdiff_t>(count));
    it += static_cast<std::ptrdiff_t>(count);
    return v;
  };
  d.s = Tensor({n, d.s_dim}, take(n * d.s_dim));
  d.a = Tensor({n, d.a_dim}, take(n * d.a_dim));
  d.r = take(n);
  d.s_next = Tensor({n, d.s_dim}, take(n * d.s_dim));
  d.done = take(n);
  d.validate();
  return d;
}

std::pair<double, double> standardize_rewards(OfflineDataset& data) {
  if (data.size() == 0) throw InputError("standardize_rewards: empty dataset");
  double mean = 0.0;
  for (float v : data.r) mean += v;
  mean /= static_cast<double>(data.size());
  double var = 0.0;
  for (float v : data.r) var += (v - mean) * (v - mean);
  var /= static_cast<double>(data.size());
  const double sd = std::sqrt(var);
  if (!(sd > 0.0)) throw DegenerateError("standardize_rewards: rewards are constant");
  for (float& v : data.r) v = static_cast<float>((v - mean) / sd);
  return {mean, sd};
}

}  // namespace egflow

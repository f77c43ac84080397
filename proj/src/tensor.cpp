#include "egflow/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "egflow/errors.hpp"

namespace egflow {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t n = rows.size();
  const std::size_t d = n ? rows.begin()->size() : 0;
  std::vector<float> values;
  values.reserve(n * d);
  for (const auto& r : rows) {
    if (r.size() != d) throw DimensionError("ragged rows in Tensor::from_rows");
    values.insert(values.end(), r.begin(), r.end());
  }
  return Tensor({n, d}, std::move(values));
}

Tensor Tensor::column(std::span<const float> values) {
  return Tensor({values.size(), 1}, std::vector<float>(values.begin(), values.end()));
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? 1 : shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 0;
  return shape_.back();
}

float Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::check_finite(std::string_view where) const {
  if (!all_finite()) throw NumericError("non-finite value in " + std::string(where));
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  if (begin > end || end > t.rows()) throw DimensionError("slice_rows out of range");
  const std::size_t d = t.cols();
  std::vector<float> out(t.storage().begin() + static_cast<std::ptrdiff_t>(begin * d),
                         t.storage().begin() + static_cast<std::ptrdiff_t>(end * d));
  return Tensor({end - begin, d}, std::move(out));
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> index) {
  const std::size_t d = t.cols();
  Tensor out = Tensor::matrix(index.size(), d);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= t.rows()) throw DimensionError("gather_rows index out of range");
    auto src = t.row(index[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Tensor repeat_rows(const Tensor& t, std::size_t times) {
  const std::size_t n = t.rows();
  const std::size_t d = t.cols();
  Tensor out = Tensor::matrix(n * times, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto src = t.row(i);
    for (std::size_t k = 0; k < times; ++k) {
      std::copy(src.begin(), src.end(), out.row(i * times + k).begin());
    }
  }
  return out;
}

Tensor concat_columns(std::span<const Tensor> parts) {
  if (parts.empty()) return {};
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != n) throw DimensionError("concat_columns: row count mismatch");
    total += p.cols();
  }
  Tensor out = Tensor::matrix(n, total);
  for (std::size_t r = 0; r < n; ++r) {
    float* dst = out.row(r).data();
    for (const auto& p : parts) {
      auto src = p.row(r);
      dst = std::copy(src.begin(), src.end(), dst);
    }
  }
  return out;
}

}  // namespace egflow

#include "egflow/autodiff.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "egflow/errors.hpp"

namespace egflow {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

constexpr float kInvSqrt2 = 0.70710678118654752440f;
constexpr float kInvSqrt2Pi = 0.39894228040143267794f;

void require_rank2(const Tensor& t, OpKind op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op_name(op)) + ": expected rank-2 tensor, got " +
                         shape_str(t.shape()));
  }
}

Tape* same_tape(Var a, Var b) {
  if (!a.valid() || !b.valid()) throw StateError("operation on an invalid Var");
  if (a.tape != b.tape) throw StateError("operands recorded on different tapes");
  return a.tape;
}

Tape* tape_of(Var a) {
  if (!a.valid()) throw StateError("operation on an invalid Var");
  return a.tape;
}

template <typename F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

}  // namespace

float softplus(float x) { return std::max(x, 0.0f) + std::log1p(std::exp(-std::fabs(x))); }

namespace {

// tanh(softplus(x)) = n(n+2) / (n(n+2) + 2) with n = e^x. Saturates to 1 in
// f32 well before n^2 could overflow.
float tanh_softplus(float x) {
  if (x > 20.0f) return 1.0f;
  const float n = std::exp(x);
  const float p = n * (n + 2.0f);
  return p / (p + 2.0f);
}

}  // namespace

float mish(float x) { return x * tanh_softplus(x); }

float mish_grad(float x) {
  if (x > 20.0f) return 1.0f;
  const float n = std::exp(x);
  const float p = n * (n + 2.0f);
  const float tsp = p / (p + 2.0f);
  return tsp + x * (1.0f - tsp * tsp) * (n / (1.0f + n));
}

float gelu(float x) { return 0.5f * x * (1.0f + std::erf(x * kInvSqrt2)); }

float gelu_grad(float x) {
  return 0.5f * (1.0f + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5f * x * x);
}

void gemm(std::span<const float> a, std::span<const float> b, std::span<float> c, std::size_t n,
          std::size_t k, std::size_t m) {
  const auto ni = static_cast<Eigen::Index>(n);
  const auto ki = static_cast<Eigen::Index>(k);
  const auto mi = static_cast<Eigen::Index>(m);
  Map(c.data(), ni, mi).noalias() = MapC(a.data(), ni, ki) * MapC(b.data(), ki, mi);
}

std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::add_row: return "add_row";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::mul_col: return "mul_col";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::tanh: return "tanh";
    case OpKind::mish: return "mish";
    case OpKind::gelu: return "gelu";
    case OpKind::square: return "square";
    case OpKind::slice_cols: return "slice_cols";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::row_sum: return "row_sum";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!valid()) throw StateError("value() on an invalid Var");
  return tape->value(*this);
}

Var Tape::leaf(Tensor value) {
  Var v = push(OpKind::leaf, {}, std::move(value));
  nodes_[static_cast<std::size_t>(v.id)].requires_grad = true;
  return v;
}

Var Tape::constant(Tensor value) { return push(OpKind::leaf, {}, std::move(value)); }

Var Tape::push(OpKind op, std::vector<int> inputs, Tensor value, float k, std::size_t a,
               std::size_t b) {
  if (backward_done_) throw StateError("tape already consumed by backward()");
  value.check_finite(op_name(op));
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.k = k;
  n.a = a;
  n.b = b;
  for (int id : inputs) n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(id)].requires_grad;
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Tape::Node& Tape::node(Var v) {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw StateError("Var does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw StateError("Var does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!backward_done_) throw StateError("grad() requested before backward()");
  if (n.grad.empty() && !n.value.empty()) {
    // Lazily materialised zeros for nodes the seed never reached.
    auto& mut = const_cast<Node&>(n);
    mut.grad = Tensor(n.value.shape(), 0.0f);
  }
  return n.grad;
}

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Tensor& Tape::grad_buffer(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0f);
  return n.grad;
}

void Tape::backward(Var output) { backward(output, Tensor(value(output).shape(), 1.0f)); }

void Tape::backward(Var output, const Tensor& seed) {
  if (nodes_.empty() || !output.valid() || output.tape != this ||
      static_cast<std::size_t>(output.id) >= nodes_.size()) {
    throw StateError("backward() without a recorded forward pass");
  }
  if (backward_done_) throw StateError("backward() called twice on one tape");
  const Node& out = nodes_[static_cast<std::size_t>(output.id)];
  if (seed.shape() != out.value.shape()) {
    throw DimensionError("backward seed shape " + shape_str(seed.shape()) + " vs output " +
                         shape_str(out.value.shape()));
  }
  backward_done_ = true;
  if (!out.requires_grad) return;
  grad_buffer(output.id) = seed;
  for (int id = output.id; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op == OpKind::leaf || !n.requires_grad || n.grad.empty()) continue;
    backprop_node(id);
  }
}

void Tape::backprop_node(int id) {
  // Copy what we need: grad_buffer() may reallocate nothing, but references into
  // nodes_ stay valid because no nodes are appended during backward.
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  const Tensor& g = n.grad;
  auto needs = [&](std::size_t i) { return nodes_[static_cast<std::size_t>(n.inputs[i])].requires_grad; };
  auto in_value = [&](std::size_t i) -> const Tensor& {
    return nodes_[static_cast<std::size_t>(n.inputs[i])].value;
  };
  auto accumulate = [&](std::size_t i, auto&& f) {
    if (!needs(i)) return;
    Tensor& dst = grad_buffer(n.inputs[i]);
    auto d = dst.data();
    for (std::size_t j = 0; j < d.size(); ++j) d[j] += f(j);
  };
  const auto gd = g.data();

  switch (n.op) {
    case OpKind::leaf:
      break;
    case OpKind::matmul: {
      const Tensor& a = in_value(0);
      const Tensor& b = in_value(1);
      const auto rows = static_cast<Eigen::Index>(a.rows());
      const auto inner = static_cast<Eigen::Index>(a.cols());
      const auto cols = static_cast<Eigen::Index>(b.cols());
      MapC gm(gd.data(), rows, cols);
      if (needs(0)) {
        Map(grad_buffer(n.inputs[0]).data().data(), rows, inner).noalias() +=
            gm * MapC(b.data().data(), inner, cols).transpose();
      }
      if (needs(1)) {
        Map(grad_buffer(n.inputs[1]).data().data(), inner, cols).noalias() +=
            MapC(a.data().data(), rows, inner).transpose() * gm;
      }
      break;
    }
    case OpKind::add:
      accumulate(0, [&](std::size_t j) { return gd[j]; });
      accumulate(1, [&](std::size_t j) { return gd[j]; });
      break;
    case OpKind::add_row: {
      accumulate(0, [&](std::size_t j) { return gd[j]; });
      if (needs(1)) {
        auto db = grad_buffer(n.inputs[1]).data();
        const std::size_t cols = db.size();
        for (std::size_t j = 0; j < gd.size(); ++j) db[j % cols] += gd[j];
      }
      break;
    }
    case OpKind::sub:
      accumulate(0, [&](std::size_t j) { return gd[j]; });
      accumulate(1, [&](std::size_t j) { return -gd[j]; });
      break;
    case OpKind::mul: {
      const auto av = in_value(0).data();
      const auto bv = in_value(1).data();
      accumulate(0, [&](std::size_t j) { return gd[j] * bv[j]; });
      accumulate(1, [&](std::size_t j) { return gd[j] * av[j]; });
      break;
    }
    case OpKind::mul_col: {
      const Tensor& c = in_value(0);
      const Tensor& x = in_value(1);
      const std::size_t d = x.cols();
      if (needs(0)) {
        auto dc = grad_buffer(n.inputs[0]).data();
        const auto xv = x.data();
        for (std::size_t r = 0; r < c.rows(); ++r) {
          float acc = 0.0f;
          for (std::size_t j = 0; j < d; ++j) acc += gd[r * d + j] * xv[r * d + j];
          dc[r] += acc;
        }
      }
      const auto cv = c.data();
      accumulate(1, [&](std::size_t j) { return gd[j] * cv[j / d]; });
      break;
    }
    case OpKind::scale:
      accumulate(0, [&](std::size_t j) { return n.k * gd[j]; });
      break;
    case OpKind::add_scalar:
      accumulate(0, [&](std::size_t j) { return gd[j]; });
      break;
    case OpKind::tanh: {
      const auto y = n.value.data();
      accumulate(0, [&](std::size_t j) { return gd[j] * (1.0f - y[j] * y[j]); });
      break;
    }
    case OpKind::mish: {
      const auto x = in_value(0).data();
      accumulate(0, [&](std::size_t j) { return gd[j] * mish_grad(x[j]); });
      break;
    }
    case OpKind::gelu: {
      const auto x = in_value(0).data();
      accumulate(0, [&](std::size_t j) { return gd[j] * gelu_grad(x[j]); });
      break;
    }
    case OpKind::square: {
      const auto x = in_value(0).data();
      accumulate(0, [&](std::size_t j) { return 2.0f * x[j] * gd[j]; });
      break;
    }
    case OpKind::slice_cols: {
      if (!needs(0)) break;
      const std::size_t width = n.b - n.a;
      auto dst = grad_buffer(n.inputs[0]).data();
      const std::size_t src_cols = in_value(0).cols();
      for (std::size_t r = 0; r < n.value.rows(); ++r) {
        for (std::size_t j = 0; j < width; ++j) dst[r * src_cols + n.a + j] += gd[r * width + j];
      }
      break;
    }
    case OpKind::concat_cols: {
      const std::size_t total = n.value.cols();
      std::size_t offset = 0;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        const std::size_t w = in_value(i).cols();
        if (needs(i)) {
          auto dst = grad_buffer(n.inputs[i]).data();
          for (std::size_t r = 0; r < n.value.rows(); ++r) {
            for (std::size_t j = 0; j < w; ++j) dst[r * w + j] += gd[r * total + offset + j];
          }
        }
        offset += w;
      }
      break;
    }
    case OpKind::sum:
      accumulate(0, [&](std::size_t) { return gd[0]; });
      break;
    case OpKind::mean: {
      const float inv = 1.0f / static_cast<float>(in_value(0).size());
      accumulate(0, [&](std::size_t) { return gd[0] * inv; });
      break;
    }
    case OpKind::row_sum: {
      const std::size_t d = in_value(0).cols();
      accumulate(0, [&](std::size_t j) { return gd[j / d]; });
      break;
    }
  }
}

Var matmul(Var a, Var b) {
  Tape* tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, OpKind::matmul);
  require_rank2(bv, OpKind::matmul);
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  Tensor out = Tensor::matrix(av.rows(), bv.cols());
  gemm(av.data(), bv.data(), out.data(), av.rows(), av.cols(), bv.cols());
  return tape->push(OpKind::matmul, {a.id, b.id}, std::move(out));
}

namespace {

template <typename F>
Var binary_same_shape(OpKind op, Var a, Var b, F f) {
  Tape* tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, op_name(op));
  Tensor out(av.shape());
  auto o = out.data();
  auto x = av.data();
  auto y = bv.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
  return tape->push(op, {a.id, b.id}, std::move(out));
}

}  // namespace

Var add(Var a, Var b) {
  return binary_same_shape(OpKind::add, a, b, [](float x, float y) { return x + y; });
}

Var sub(Var a, Var b) {
  return binary_same_shape(OpKind::sub, a, b, [](float x, float y) { return x - y; });
}

Var mul(Var a, Var b) {
  return binary_same_shape(OpKind::mul, a, b, [](float x, float y) { return x * y; });
}

Var add_row(Var x, Var bias) {
  Tape* tape = same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require_rank2(xv, OpKind::add_row);
  if (bv.size() != xv.cols()) {
    throw DimensionError("add_row: bias " + shape_str(bv.shape()) + " vs input " + shape_str(xv.shape()));
  }
  Tensor out = xv;
  auto o = out.data();
  auto bd = bv.data();
  const std::size_t d = xv.cols();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i % d];
  return tape->push(OpKind::add_row, {x.id, bias.id}, std::move(out));
}

Var mul_col(Var c, Var x) {
  Tape* tape = same_tape(c, x);
  const Tensor& cv = c.value();
  const Tensor& xv = x.value();
  require_rank2(xv, OpKind::mul_col);
  if (cv.rank() != 2 || cv.cols() != 1 || cv.rows() != xv.rows()) {
    throw DimensionError("mul_col: column " + shape_str(cv.shape()) + " vs " + shape_str(xv.shape()));
  }
  Tensor out = xv;
  const std::size_t d = xv.cols();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= cv[i / d];
  return tape->push(OpKind::mul_col, {c.id, x.id}, std::move(out));
}

Var scale(Var a, float k) {
  Tape* tape = tape_of(a);
  return tape->push(OpKind::scale, {a.id}, map_unary(a.value(), [k](float x) { return k * x; }), k);
}

Var add_scalar(Var a, float k) {
  Tape* tape = tape_of(a);
  return tape->push(OpKind::add_scalar, {a.id}, map_unary(a.value(), [k](float x) { return x + k; }), k);
}

Var tanh(Var a) {
  Tape* tape = tape_of(a);
  return tape->push(OpKind::tanh, {a.id}, map_unary(a.value(), [](float x) { return std::tanh(x); }));
}

Var mish(Var a) {
  Tape* tape = tape_of(a);
  return tape->push(OpKind::mish, {a.id}, map_unary(a.value(), [](float x) { return mish(x); }));
}

Var gelu(Var a) {
  Tape* tape = tape_of(a);
  return tape->push(OpKind::gelu, {a.id}, map_unary(a.value(), [](float x) { return gelu(x); }));
}

Var square(Var a) {
  Tape* tape = tape_of(a);
  return tape->push(OpKind::square, {a.id}, map_unary(a.value(), [](float x) { return x * x; }));
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape* tape = tape_of(a);
  const Tensor& av = a.value();
  require_rank2(av, OpKind::slice_cols);
  if (begin >= end || end > av.cols()) throw DimensionError("slice_cols: bad column range");
  const std::size_t w = end - begin;
  Tensor out = Tensor::matrix(av.rows(), w);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    auto src = av.row(r).subspan(begin, w);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return tape->push(OpKind::slice_cols, {a.id}, std::move(out), 0.0f, begin, end);
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Tape* tape = tape_of(parts[0]);
  std::vector<Tensor> values;
  std::vector<int> ids;
  values.reserve(parts.size());
  for (const Var& p : parts) {
    if (p.tape != tape) throw StateError("operands recorded on different tapes");
    require_rank2(p.value(), OpKind::concat_cols);
    values.push_back(p.value());
    ids.push_back(p.id);
  }
  return tape->push(OpKind::concat_cols, std::move(ids), concat_columns(values));
}

Var sum(Var a) {
  Tape* tape = tape_of(a);
  float acc = 0.0f;
  for (float v : a.value().data()) acc += v;
  return tape->push(OpKind::sum, {a.id}, Tensor::scalar(acc));
}

Var mean(Var a) {
  Tape* tape = tape_of(a);
  const Tensor& av = a.value();
  if (av.empty()) throw DimensionError("mean of empty tensor");
  float acc = 0.0f;
  for (float v : av.data()) acc += v;
  return tape->push(OpKind::mean, {a.id}, Tensor::scalar(acc / static_cast<float>(av.size())));
}

Var row_sum(Var a) {
  Tape* tape = tape_of(a);
  const Tensor& av = a.value();
  require_rank2(av, OpKind::row_sum);
  Tensor out = Tensor::matrix(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    float acc = 0.0f;
    for (float v : av.row(r)) acc += v;
    out[r] = acc;
  }
  return tape->push(OpKind::row_sum, {a.id}, std::move(out));
}

}  // namespace egflow

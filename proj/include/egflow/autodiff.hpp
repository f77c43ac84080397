#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "egflow/tensor.hpp"

namespace egflow {

// Scalar activation kernels, shared by the tape and the tape-free inference path
// so both produce identical bits.
float softplus(float x);
float mish(float x);
float mish_grad(float x);
float gelu(float x);
float gelu_grad(float x);

// Dense kernels over row-major buffers.
/// C[n,m] = A[n,k] * B[k,m]
void gemm(std::span<const float> a, std::span<const float> b, std::span<float> c, std::size_t n,
          std::size_t k, std::size_t m);

enum class OpKind : std::uint8_t {
  leaf,
  matmul,
  add,
  add_row,
  sub,
  mul,
  mul_col,
  scale,
  add_scalar,
  tanh,
  mish,
  gelu,
  square,
  slice_cols,
  concat_cols,
  sum,
  mean,
  row_sum,
};

std::string_view op_name(OpKind op);

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
};

/// Records a forward computation over a fixed op vocabulary and replays it in
/// reverse. Nodes are appended in evaluation order, so every input id precedes
/// its consumer. A tape supports exactly one backward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);

  const Tensor& value(Var v) const;
  /// Gradient accumulated by backward(); zeros if the node received none.
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  /// Reverse pass for <seed, output>.
  void backward(Var output, const Tensor& seed);
  /// Reverse pass for a scalar output with seed 1.
  void backward(Var output);

  // Node construction. Prefer the free functions below.
  Var push(OpKind op, std::vector<int> inputs, Tensor value, float k = 0.0f, std::size_t a = 0,
           std::size_t b = 0);

 private:
  struct Node {
    OpKind op = OpKind::leaf;
    std::vector<int> inputs;
    Tensor value;
    Tensor grad;
    float k = 0.0f;
    std::size_t a = 0;
    std::size_t b = 0;
    bool requires_grad = false;
  };

  Node& node(Var v);
  const Node& node(Var v) const;
  Tensor& grad_buffer(int id);
  void backprop_node(int id);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

Var matmul(Var a, Var b);
/// Elementwise a+b for identical shapes.
Var add(Var a, Var b);
/// x[n,m] + bias[1,m] broadcast over rows.
Var add_row(Var x, Var bias);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// c[n,1] scales each row of x[n,d].
Var mul_col(Var c, Var x);
Var scale(Var a, float k);
Var add_scalar(Var a, float k);
Var tanh(Var a);
Var mish(Var a);
Var gelu(Var a);
Var square(Var a);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_cols(std::span<const Var> parts);
Var sum(Var a);
Var mean(Var a);
/// [n,d] -> [n,1]
Var row_sum(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(float k, Var a) { return scale(a, k); }

}  // namespace egflow

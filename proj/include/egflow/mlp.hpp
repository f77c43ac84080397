#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "egflow/autodiff.hpp"
#include "egflow/rng.hpp"
#include "egflow/tensor.hpp"

namespace egflow {

enum class Activation { mish, tanh, gelu, identity };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

/// Applies the activation elementwise in place.
void apply_activation(Activation a, std::span<float> values);

/// Fully connected network. `sizes` lists every layer width including input and
/// output; the activation follows each hidden layer and the output is affine.
struct MlpParams {
  std::vector<std::size_t> sizes;
  Activation activation = Activation::mish;
  std::vector<Tensor> weights;  // [in, out] per layer
  std::vector<Tensor> biases;   // [1, out] per layer

  /// PyTorch-style U(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
  static MlpParams init(std::vector<std::size_t> sizes, Activation activation, Rng& rng);
  static MlpParams zeros(std::vector<std::size_t> sizes, Activation activation);

  std::size_t input_dim() const { return sizes.front(); }
  std::size_t output_dim() const { return sizes.back(); }
  std::size_t num_layers() const { return weights.size(); }
  std::size_t parameter_count() const;

  /// Parameters in declaration order: W0, b0, W1, b1, ...
  std::vector<float> flatten() const;
  void assign(std::span<const float> flat);
  /// Weights and biases interleaved the same way as flatten().
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;

  bool same_architecture(const MlpParams& other) const {
    return sizes == other.sizes && activation == other.activation;
  }
};

/// Parameter leaves registered on a tape by mlp_forward, in flatten() order.
struct MlpBinding {
  std::vector<Var> params;
  /// Set by bind(); later forwards on the same tape reuse these leaves so
  /// gradients from repeated calls accumulate in one place.
  bool bound = false;

  void bind(const MlpParams& net, Tape& tape);

  /// Gradients for every parameter tensor after backward().
  std::vector<Tensor> grads(const Tape& tape) const;
};

/// Records the network on `tape`. With a binding the parameters are trainable
/// leaves; without one they enter as constants and receive no gradient.
Var mlp_forward(const MlpParams& params, Var input, Tape& tape, MlpBinding* binding = nullptr);

/// Tape-free inference; bit-identical to the recorded forward.
Tensor mlp_forward(const MlpParams& params, const Tensor& input);

/// Flat little-endian f32 vector plus a JSON manifest with sizes, activation
/// and parameter count.
void save_mlp(const MlpParams& params, const std::filesystem::path& dir);
MlpParams load_mlp(const std::filesystem::path& dir);

}  // namespace egflow

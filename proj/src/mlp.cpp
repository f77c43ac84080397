#include "egflow/mlp.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "egflow/binary_io.hpp"
#include "egflow/errors.hpp"

namespace egflow {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::mish: return "mish";
    case Activation::tanh: return "tanh";
    case Activation::gelu: return "gelu";
    case Activation::identity: return "identity";
  }
  return "identity";
}

Activation activation_from_string(std::string_view name) {
  if (name == "mish") return Activation::mish;
  if (name == "tanh") return Activation::tanh;
  if (name == "gelu") return Activation::gelu;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

void apply_activation(Activation a, std::span<float> values) {
  switch (a) {
    case Activation::mish:
      for (float& v : values) v = mish(v);
      break;
    case Activation::tanh:
      for (float& v : values) v = std::tanh(v);
      break;
    case Activation::gelu:
      for (float& v : values) v = gelu(v);
      break;
    case Activation::identity:
      break;
  }
}

namespace {

void check_sizes(const std::vector<std::size_t>& sizes) {
  if (sizes.size() < 2) throw DimensionError("MLP needs at least input and output sizes");
  for (auto s : sizes) {
    if (s == 0) throw DimensionError("MLP layer of width 0");
  }
}

Var activate(Activation a, Var x) {
  switch (a) {
    case Activation::mish: return mish(x);
    case Activation::tanh: return tanh(x);
    case Activation::gelu: return gelu(x);
    case Activation::identity: return x;
  }
  return x;
}

}  // namespace

MlpParams MlpParams::zeros(std::vector<std::size_t> sizes, Activation activation) {
  check_sizes(sizes);
  MlpParams p;
  p.sizes = std::move(sizes);
  p.activation = activation;
  for (std::size_t l = 0; l + 1 < p.sizes.size(); ++l) {
    p.weights.push_back(Tensor::matrix(p.sizes[l], p.sizes[l + 1]));
    p.biases.push_back(Tensor::matrix(1, p.sizes[l + 1]));
  }
  return p;
}

MlpParams MlpParams::init(std::vector<std::size_t> sizes, Activation activation, Rng& rng) {
  MlpParams p = zeros(std::move(sizes), activation);
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(p.sizes[l]));
    for (float& w : p.weights[l].data()) w = static_cast<float>(rng.uniform(-bound, bound));
    for (float& b : p.biases[l].data()) b = static_cast<float>(rng.uniform(-bound, bound));
  }
  return p;
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

std::vector<Tensor*> MlpParams::tensors() {
  std::vector<Tensor*> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(&weights[l]);
    out.push_back(&biases[l]);
  }
  return out;
}

std::vector<const Tensor*> MlpParams::tensors() const {
  std::vector<const Tensor*> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(&weights[l]);
    out.push_back(&biases[l]);
  }
  return out;
}

std::vector<float> MlpParams::flatten() const {
  std::vector<float> flat;
  flat.reserve(parameter_count());
  for (const Tensor* t : tensors()) flat.insert(flat.end(), t->data().begin(), t->data().end());
  return flat;
}

void MlpParams::assign(std::span<const float> flat) {
  if (flat.size() != parameter_count()) {
    throw DimensionError("MLP assign: expected " + std::to_string(parameter_count()) + " values, got " +
                         std::to_string(flat.size()));
  }
  std::size_t offset = 0;
  for (Tensor* t : tensors()) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), t->size(), t->data().begin());
    offset += t->size();
  }
}

void MlpBinding::bind(const MlpParams& net, Tape& tape) {
  params.clear();
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    params.push_back(tape.leaf(net.weights[l]));
    params.push_back(tape.leaf(net.biases[l]));
  }
  bound = true;
}

std::vector<Tensor> MlpBinding::grads(const Tape& tape) const {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Var& v : params) out.push_back(tape.grad(v));
  return out;
}

Var mlp_forward(const MlpParams& params, Var input, Tape& tape, MlpBinding* binding) {
  const Tensor& x = input.value();
  if (x.rank() != 2 || x.cols() != params.input_dim()) {
    throw DimensionError("mlp_forward: input " + shape_str(x.shape()) + " but network expects width " +
                         std::to_string(params.input_dim()));
  }
  const std::size_t layers = params.num_layers();
  const bool reuse = binding && binding->bound;
  if (reuse && binding->params.size() != 2 * layers) throw StateError("mlp_forward: binding is for another network");
  if (binding && !reuse) binding->params.clear();
  Var h = input;
  for (std::size_t l = 0; l < layers; ++l) {
    if (reuse) {
      h = add_row(matmul(h, binding->params[2 * l]), binding->params[2 * l + 1]);
      if (l + 1 < layers) h = activate(params.activation, h);
      continue;
    }
    Var w = binding ? tape.leaf(params.weights[l]) : tape.constant(params.weights[l]);
    Var b = binding ? tape.leaf(params.biases[l]) : tape.constant(params.biases[l]);
    if (binding) {
      binding->params.push_back(w);
      binding->params.push_back(b);
    }
    h = add_row(matmul(h, w), b);
    if (l + 1 < layers) h = activate(params.activation, h);
  }
  return h;
}

Tensor mlp_forward(const MlpParams& params, const Tensor& input) {
  if (input.rank() != 2 || input.cols() != params.input_dim()) {
    throw DimensionError("mlp_forward: input " + shape_str(input.shape()) +
                         " but network expects width " + std::to_string(params.input_dim()));
  }
  Tensor h = input;
  const std::size_t layers = params.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    const Tensor& w = params.weights[l];
    Tensor next = Tensor::matrix(h.rows(), w.cols());
    gemm(h.data(), w.data(), next.data(), h.rows(), w.rows(), w.cols());
    auto o = next.data();
    auto bd = params.biases[l].data();
    const std::size_t d = w.cols();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i % d];
    if (l + 1 < layers) apply_activation(params.activation, o);
    h = std::move(next);
  }
  h.check_finite("mlp_forward");
  return h;
}

void save_mlp(const MlpParams& params, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {
      {"layer_sizes", params.sizes},
      {"activation", std::string(to_string(params.activation))},
      {"parameter_count", params.parameter_count()},
  };
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  const auto flat = params.flatten();
  write_bytes(dir / "params.bin", encode_f32_le(flat));
}

MlpParams load_mlp(const std::filesystem::path& dir) {
  std::vector<std::size_t> sizes;
  std::string act_name;
  std::size_t declared = 0;
  try {
    const auto manifest = nlohmann::json::parse(read_text(dir / "manifest.json"));
    sizes = manifest.at("layer_sizes").get<std::vector<std::size_t>>();
    act_name = manifest.at("activation").get<std::string>();
    declared = manifest.at("parameter_count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("bad MLP manifest: ") + e.what());
  }
  if (sizes.size() < 2) throw CorruptionError("bad MLP manifest: fewer than two layer sizes");
  Activation act{};
  try {
    act = activation_from_string(act_name);
  } catch (const ConfigError& e) {
    throw CorruptionError(std::string("bad MLP manifest: ") + e.what());
  }
  MlpParams p = MlpParams::zeros(std::move(sizes), act);
  const auto flat = decode_f32_le(read_bytes(dir / "params.bin"));
  if (declared != p.parameter_count() || flat.size() != declared) {
    throw CorruptionError("MLP payload holds " + std::to_string(flat.size()) + " values, manifest declares " +
                          std::to_string(declared));
  }
  p.assign(flat);
  return p;
}

}  // namespace egflow

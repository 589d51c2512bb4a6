#pragma once

// Parameterised building blocks shared by the alignment, adaptation, encoder and
// decoder modules.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hfan/autodiff.hpp"
#include "hfan/ops.hpp"

namespace hfan {

/// Tape plus train/eval switch threaded through every forward call.
template <typename T>
struct Context {
  Tape<T>& tape;
  ops::Mode mode = ops::Mode::Train;
};

template <typename T>
struct NamedBatchNorm {
  std::string name;
  ops::BatchNormState<T>* state;
};

/// Flat views of a module's trainable tensors and batch-norm states.
template <typename T>
struct ModuleState {
  std::vector<Parameter<T>*> params;
  std::vector<NamedBatchNorm<T>> batchnorms;
};

/// Deterministic per-layer stream: seeded from the model seed and the layer name so
/// initial weights do not depend on construction order.
std::uint64_t layer_seed(std::uint64_t model_seed, const std::string& name);

template <typename T>
struct Conv1x1Layer {
  Parameter<T> weight;  // [out x in]
  Parameter<T> bias;    // [out]

  Conv1x1Layer() = default;
  /// Weights ~ U(-b, b) with b = sqrt(6 / fan_in); bias zero. `zero` gives an all-zero layer.
  Conv1x1Layer(const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed, bool zero = false);

  std::size_t in_channels() const { return weight.value.dim(1); }
  std::size_t out_channels() const { return weight.value.dim(0); }

  Var<T> operator()(Context<T>& ctx, const Var<T>& x);
  void collect(ModuleState<T>& s);
};

template <typename T>
struct BatchNormLayer {
  std::string name;
  Parameter<T> gamma;
  Parameter<T> beta;
  ops::BatchNormState<T> state;

  BatchNormLayer() = default;
  BatchNormLayer(const std::string& name, std::size_t channels);

  Var<T> operator()(Context<T>& ctx, const Var<T>& x);
  void collect(ModuleState<T>& s);
};

/// Conv1x1 -> BN -> ReLU.
template <typename T>
struct ConvBnRelu {
  Conv1x1Layer<T> conv;
  BatchNormLayer<T> bn;

  ConvBnRelu() = default;
  ConvBnRelu(const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed);

  Var<T> operator()(Context<T>& ctx, const Var<T>& x);
  void collect(ModuleState<T>& s);
};

}  // namespace hfan

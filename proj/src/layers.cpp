#include "hfan/layers.hpp"

#include <cmath>

#include "hfan/rng.hpp"

namespace hfan {

std::uint64_t layer_seed(std::uint64_t model_seed, const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return derive_seed(model_seed, h);
}

template <typename T>
Conv1x1Layer<T>::Conv1x1Layer(const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed,
                              bool zero)
    : weight(name + ".weight", Tensor<T>::zeros({out, in})), bias(name + ".bias", Tensor<T>::zeros({out})) {
  if (in == 0 || out == 0) throw ConfigError(name + ": channel counts must be positive");
  if (zero) return;
  Rng rng(layer_seed(seed, name));
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  for (T& v : weight.value.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
Var<T> Conv1x1Layer<T>::operator()(Context<T>& ctx, const Var<T>& x) {
  return ops::conv1x1(x, ctx.tape.parameter(weight), ctx.tape.parameter(bias));
}

template <typename T>
void Conv1x1Layer<T>::collect(ModuleState<T>& s) {
  s.params.push_back(&weight);
  s.params.push_back(&bias);
}

template <typename T>
BatchNormLayer<T>::BatchNormLayer(const std::string& n, std::size_t channels)
    : name(n),
      gamma(n + ".gamma", Tensor<T>::ones({channels})),
      beta(n + ".beta", Tensor<T>::zeros({channels})),
      state(channels) {}

template <typename T>
Var<T> BatchNormLayer<T>::operator()(Context<T>& ctx, const Var<T>& x) {
  return ops::batchnorm(x, ctx.tape.parameter(gamma), ctx.tape.parameter(beta), state, ctx.mode);
}

template <typename T>
void BatchNormLayer<T>::collect(ModuleState<T>& s) {
  s.params.push_back(&gamma);
  s.params.push_back(&beta);
  s.batchnorms.push_back({name, &state});
}

template <typename T>
ConvBnRelu<T>::ConvBnRelu(const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed)
    : conv(name + ".conv", in, out, seed), bn(name + ".bn", out) {}

template <typename T>
Var<T> ConvBnRelu<T>::operator()(Context<T>& ctx, const Var<T>& x) {
  return ops::relu(bn(ctx, conv(ctx, x)));
}

template <typename T>
void ConvBnRelu<T>::collect(ModuleState<T>& s) {
  conv.collect(s);
  bn.collect(s);
}

template struct Conv1x1Layer<float>;
template struct Conv1x1Layer<double>;
template struct BatchNormLayer<float>;
template struct BatchNormLayer<double>;
template struct ConvBnRelu<float>;
template struct ConvBnRelu<double>;

}  // namespace hfan

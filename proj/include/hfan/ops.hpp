#pragma once

// Differentiable primitives. Every op reads its inputs from the tape, computes the
// forward value with the kernels in kernels.hpp, and records a backward rule.

#include <cstddef>
#include <vector>

#include "hfan/autodiff.hpp"
#include "hfan/tensor.hpp"

namespace hfan::ops {

/// a[m x k] * b[k x n].
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// Batched product a[B x m x k] * b[B x k x n].
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b);

/// Swaps the last two axes of a rank-3 tensor.
template <typename T>
Var<T> transpose_last2(const Var<T>& x);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

/// Pointwise linear map over channels: x[N x Cin x H x W], w[Cout x Cin], bias[Cout].
template <typename T>
Var<T> conv1x1(const Var<T>& x, const Var<T>& w, const Var<T>& bias);

enum class Mode { Train, Eval };

/// Running statistics of one batch-norm layer.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  /// Number of train-mode batches folded into the running statistics.
  std::size_t batches = 0;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean(Tensor<T>::zeros({channels})), running_var(Tensor<T>::ones({channels})) {}

  bool initialized() const noexcept { return batches > 0; }
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel normalization of x[N x C x H x W]. Train mode uses batch statistics and
/// folds them into `state`; eval mode uses `state` and throws StateError if it was never trained.
template <typename T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormState<T>& state,
                 Mode mode, double eps = kBatchNormEps, double momentum = kBatchNormMomentum);

/// Elementwise arithmetic. `b` may broadcast along axes where its extent is 1.
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& x, T s);
template <typename T>
Var<T> add_scalar(const Var<T>& x, T s);

/// Numerically stable softmax along `axis`.
template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis);

template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x);

/// x[N x C x H x W] -> N x C x 1 x 1 spatial mean.
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

/// 2x2 average pooling with stride 2; H and W must be even.
template <typename T>
Var<T> avg_pool2(const Var<T>& x);

/// Bilinear resampling with half-pixel centres (no corner alignment).
template <typename T>
Var<T> bilinear_resize(const Var<T>& x, std::size_t out_h, std::size_t out_w);

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, std::size_t axis);

/// Sub-range [begin, end) along `axis`.
template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t begin, std::size_t end);

/// Sum of all elements, shape {1}.
template <typename T>
Var<T> sum(const Var<T>& x);

/// Mean over all positions of -log softmax(logits)[label]; logits N x K x H x W, labels N x 1 x H x W.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const Tensor<T>& labels);

// Value-level helpers shared with non-differentiable code paths.

template <typename T>
Tensor<T> softmax_value(const Tensor<T>& x, std::size_t axis);

template <typename T>
Tensor<T> bilinear_resize_value(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

/// Nearest-neighbour resampling with half-pixel centres (used for label maps).
template <typename T>
Tensor<T> nearest_resize_value(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

template <typename T>
T sigmoid_scalar(T x);

}  // namespace hfan::ops

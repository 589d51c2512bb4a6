#pragma once

// Feature alignment: a coarse two-class mask predicted from appearance features,
// per-class semantic vectors pooled under that mask, and pixel-to-class attention
// that rewrites both the appearance and the motion stream against the same class
// vectors.

#include <cstdint>
#include <string>

#include "hfan/layers.hpp"

namespace hfan {

/// Foreground and background.
inline constexpr std::size_t kNumClasses = 2;

/// Query/key/value width: min(16, channels) unless overridden.
std::size_t attention_width(std::size_t channels, std::size_t requested = 16);

/// Conv1x1(C -> 2) -> BN -> ReLU.
template <typename T>
struct CoarseSegHead {
  ConvBnRelu<T> block;

  CoarseSegHead() = default;
  CoarseSegHead(const std::string& name, std::size_t channels, std::uint64_t seed);
  void collect(ModuleState<T>& s) { block.collect(s); }
};

/// Coarse mask P[N x 2 x H x W] (non-negative).
template <typename T>
Var<T> coarse_seg(Context<T>& ctx, const Var<T>& appearance, CoarseSegHead<T>& head);

/// Class semantics M[N x C x 2]: for each class, a spatial-softmax-weighted average of
/// the appearance pixel features.
template <typename T>
Var<T> css(const Var<T>& appearance, const Var<T>& coarse);

template <typename T>
struct AttentionResult {
  Var<T> weights;  // N x (H*W) x classes, rows sum to 1
  Var<T> context;  // N x d x H x W
};

/// softmax(alpha * q^T k) v per pixel. q: N x d x H x W; key, value: N x d x classes.
template <typename T>
AttentionResult<T> attend(const Var<T>& query, const Var<T>& key, const Var<T>& value, T alpha);

/// Primary-object-context block parameters.
template <typename T>
struct PocParams {
  ConvBnRelu<T> query;  // C -> d
  ConvBnRelu<T> key;    // C -> d
  ConvBnRelu<T> value;  // C -> d
  ConvBnRelu<T> out;    // C + d -> C
  std::size_t channels = 0;

  PocParams() = default;
  PocParams(const std::string& name, std::size_t channels, std::size_t d, std::uint64_t seed);
  void collect(ModuleState<T>& s);
};

/// Rewrites X[N x C x H x W] using class semantics M[N x C x 2]:
/// Conv-BN-ReLU(concat(X, attended context)) back to C channels.
template <typename T>
Var<T> poc(Context<T>& ctx, const Var<T>& x, const Var<T>& semantics, PocParams<T>& params,
           AttentionResult<T>* attention = nullptr);

template <typename T>
struct AlignedPair {
  Var<T> appearance;
  Var<T> motion;
};

template <typename T>
struct FamParams {
  CoarseSegHead<T> coarse;
  PocParams<T> poc_appearance;
  PocParams<T> poc_motion;  // only used when share_poc is false
  bool share_poc = true;

  FamParams() = default;
  FamParams(const std::string& name, std::size_t channels, std::size_t d, bool share_poc, std::uint64_t seed);
  void collect(ModuleState<T>& s);
};

/// Aligns both streams to the class semantics of the appearance stream.
template <typename T>
AlignedPair<T> fam(Context<T>& ctx, const Var<T>& appearance, const Var<T>& motion, FamParams<T>& params);

}  // namespace hfan

#pragma once

// The segmentation network: a four-stage pyramid encoder shared by frames and flow
// images, one alignment/adaptation stage per level, and a light decoder that merges
// all levels at 1/4 resolution.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hfan/adapt.hpp"

namespace hfan {

inline constexpr std::size_t kNumStages = 4;
/// Input extents must be multiples of this (stage 4 is at 1/32 resolution).
inline constexpr std::size_t kInputMultiple = 32;

struct ModelConfig {
  std::array<std::size_t, kNumStages> stage_channels{8, 16, 32, 64};
  std::size_t decoder_dim = 64;
  /// Requested attention width; each stage uses min(this, C_i).
  std::size_t attn_width = 16;
  bool share_encoder = true;
  bool share_poc = true;
  Fusion fusion = Fusion::Hfan;
  std::uint64_t seed = 0;

  /// Throws ConfigError on non-positive or decreasing widths.
  void validate() const;
};

/// Stride-4 stem then three stride-2 stages; every block is Conv1x1-BN-ReLU.
template <typename T>
struct Encoder {
  ConvBnRelu<T> stem;
  std::array<ConvBnRelu<T>, kNumStages> stages;

  Encoder() = default;
  Encoder(const std::string& name, const ModelConfig& cfg);
  /// Stage i has stage_channels[i] channels at H / 2^(i+2).
  std::array<Var<T>, kNumStages> operator()(Context<T>& ctx, const Var<T>& image);
  void collect(ModuleState<T>& s);
};

template <typename T>
struct Decoder {
  std::array<Conv1x1Layer<T>, kNumStages> project;
  ConvBnRelu<T> fuse;
  Conv1x1Layer<T> classify;

  Decoder() = default;
  Decoder(const std::string& name, const ModelConfig& cfg);
  /// Logits N x 2 x out_h x out_w.
  Var<T> operator()(Context<T>& ctx, const std::array<Var<T>, kNumStages>& fused, std::size_t out_h,
                    std::size_t out_w);
  void collect(ModuleState<T>& s);
};

template <typename T>
struct SegNet {
  ModelConfig config;
  Encoder<T> frame_encoder;
  Encoder<T> flow_encoder;  // unused when the encoder is shared
  std::array<StageParams<T>, kNumStages> stages;
  Decoder<T> decoder;

  SegNet() = default;
  explicit SegNet(const ModelConfig& cfg);

  /// Appearance and motion features per stage. Either input may be invalid when the
  /// fusion mode does not use it.
  std::array<std::array<Var<T>, kNumStages>, 2> encode(Context<T>& ctx, const Var<T>& frames, const Var<T>& flows);

  /// Logits N x 2 x H x W.
  Var<T> forward(Context<T>& ctx, const Var<T>& frames, const Var<T>& flows);

  /// All parameters and BN states in a fixed order.
  ModuleState<T> state();
};

/// Mean over N*H*W of -log softmax(logits)[label]. Throws DataError for non-binary labels.
template <typename T>
Var<T> ce_loss(const Var<T>& logits, const Tensor<T>& labels);

struct PredictedMask {
  Tensor<float> probs;   // N x 2 x H x W, averaged over scales
  Tensor<float> labels;  // N x 1 x H x W of {0, 1}
};

/// Foreground iff its probability is strictly greater; ties go to background.
Tensor<float> argmax_labels(const Tensor<float>& probs);

/// Extent used for scale `s`: round(extent * s / 32) * 32. Throws ContractError below 32.
std::size_t snapped_extent(std::size_t extent, double scale);

/// Eval-mode inference. Inputs are resized per scale, probabilities resized back to
/// the input size and averaged in double precision.
PredictedMask predict(SegNet<float>& model, const Tensor<float>& frames, const Tensor<float>& flows,
                      const std::vector<double>& scales = {1.0});

inline const std::vector<double> kMultiScale{0.75, 1.0, 1.25};

}  // namespace hfan

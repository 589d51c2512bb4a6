#pragma once

// Feature adaptation: a learned per-element gate blends the aligned appearance and
// motion maps as a convex combination, and the per-stage composition of alignment
// followed by adaptation.

#include <cstdint>
#include <string>

#include "hfan/align.hpp"

namespace hfan {

/// Gate branch bottleneck: C / 4 channels (at least 1).
inline constexpr std::size_t kGateReduction = 4;

/// F = I_hat + O_hat.
template <typename T>
Var<T> fuse_sum(const Var<T>& appearance, const Var<T>& motion);

template <typename T>
struct FatParams {
  // Full-resolution branch: Conv(C->C/4)-BN-ReLU-Conv(C/4->C).
  ConvBnRelu<T> spatial_reduce;
  Conv1x1Layer<T> spatial_expand;
  // Pooled-descriptor branch: GAP-Conv(C->C/4)-ReLU-Conv(C/4->C), broadcast over H x W.
  Conv1x1Layer<T> pooled_reduce;
  Conv1x1Layer<T> pooled_expand;

  FatParams() = default;
  /// Both expand layers start at zero so the initial gate is 0.5 everywhere.
  FatParams(const std::string& name, std::size_t channels, std::uint64_t seed);
  void collect(ModuleState<T>& s);
};

template <typename T>
struct FatResult {
  Var<T> fused;  // U
  Var<T> gate;   // sigmoid output, in (0, 1)
};

/// U = I_hat * g + O_hat * (1 - g), g = sigmoid(spatial(F) + pooled(F)).
template <typename T>
FatResult<T> fat(Context<T>& ctx, const Var<T>& appearance, const Var<T>& motion, FatParams<T>& params);

/// How a stage combines its two streams. `Hfan` is the full model; the others are ablations.
enum class Fusion { Hfan, FamOnly, FatOnly, Add, FrameOnly, FlowOnly };

std::string fusion_name(Fusion f);
Fusion parse_fusion(const std::string& s);

/// Whether a fusion mode consumes the given stream.
bool uses_frames(Fusion f);
bool uses_flow(Fusion f);

template <typename T>
struct StageParams {
  Fusion fusion = Fusion::Hfan;
  FamParams<T> align;
  FatParams<T> adapt;

  StageParams() = default;
  StageParams(const std::string& name, std::size_t channels, std::size_t d, bool share_poc, Fusion fusion,
              std::uint64_t seed);
  void collect(ModuleState<T>& s);
};

/// U_i for one encoder stage. For FrameOnly / FlowOnly the unused stream may be invalid.
template <typename T>
Var<T> hfan_stage(Context<T>& ctx, const Var<T>& appearance, const Var<T>& motion, StageParams<T>& params);

}  // namespace hfan

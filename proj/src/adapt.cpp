#include "hfan/adapt.hpp"

#include <algorithm>

namespace hfan {

template <typename T>
Var<T> fuse_sum(const Var<T>& appearance, const Var<T>& motion) {
  if (appearance.shape() != motion.shape()) {
    throw DimensionError("fuse_sum: " + shape_str(appearance.shape()) + " vs " + shape_str(motion.shape()));
  }
  return ops::add(appearance, motion);
}

template <typename T>
FatParams<T>::FatParams(const std::string& name, std::size_t c, std::uint64_t seed) {
  const std::size_t r = std::max<std::size_t>(1, c / kGateReduction);
  spatial_reduce = ConvBnRelu<T>(name + ".spatial_reduce", c, r, seed);
  spatial_expand = Conv1x1Layer<T>(name + ".spatial_expand", r, c, seed, true);
  pooled_reduce = Conv1x1Layer<T>(name + ".pooled_reduce", c, r, seed);
  pooled_expand = Conv1x1Layer<T>(name + ".pooled_expand", r, c, seed, true);
}

template <typename T>
void FatParams<T>::collect(ModuleState<T>& s) {
  spatial_reduce.collect(s);
  spatial_expand.collect(s);
  pooled_reduce.collect(s);
  pooled_expand.collect(s);
}

template <typename T>
FatResult<T> fat(Context<T>& ctx, const Var<T>& appearance, const Var<T>& motion, FatParams<T>& params) {
  Var<T> f = fuse_sum(appearance, motion);
  Var<T> spatial = params.spatial_expand(ctx, params.spatial_reduce(ctx, f));
  Var<T> pooled = params.pooled_expand(ctx, ops::relu(params.pooled_reduce(ctx, ops::global_avg_pool(f))));
  Var<T> gate = ops::sigmoid(ops::add(spatial, pooled));
  Var<T> complement = ops::add_scalar(ops::scale(gate, T(-1)), T(1));
  Var<T> fused = ops::add(ops::mul(appearance, gate), ops::mul(motion, complement));
  return {fused, gate};
}

std::string fusion_name(Fusion f) {
  switch (f) {
    case Fusion::Hfan: return "hfan";
    case Fusion::FamOnly: return "fam";
    case Fusion::FatOnly: return "fat";
    case Fusion::Add: return "add";
    case Fusion::FrameOnly: return "frame";
    case Fusion::FlowOnly: return "flow";
  }
  return "?";
}

Fusion parse_fusion(const std::string& s) {
  for (Fusion f : {Fusion::Hfan, Fusion::FamOnly, Fusion::FatOnly, Fusion::Add, Fusion::FrameOnly, Fusion::FlowOnly})
    if (fusion_name(f) == s) return f;
  throw ConfigError("unknown fusion mode '" + s + "' (expected hfan|fam|fat|add|frame|flow)");
}

bool uses_frames(Fusion f) { return f != Fusion::FlowOnly; }
bool uses_flow(Fusion f) { return f != Fusion::FrameOnly; }

template <typename T>
StageParams<T>::StageParams(const std::string& name, std::size_t c, std::size_t d, bool share_poc, Fusion f,
                            std::uint64_t seed)
    : fusion(f) {
  if (f == Fusion::Hfan || f == Fusion::FamOnly) align = FamParams<T>(name + ".fam", c, d, share_poc, seed);
  if (f == Fusion::Hfan || f == Fusion::FatOnly) adapt = FatParams<T>(name + ".fat", c, seed);
}

template <typename T>
void StageParams<T>::collect(ModuleState<T>& s) {
  if (fusion == Fusion::Hfan || fusion == Fusion::FamOnly) align.collect(s);
  if (fusion == Fusion::Hfan || fusion == Fusion::FatOnly) adapt.collect(s);
}

template <typename T>
Var<T> hfan_stage(Context<T>& ctx, const Var<T>& appearance, const Var<T>& motion, StageParams<T>& params) {
  switch (params.fusion) {
    case Fusion::Hfan: {
      AlignedPair<T> aligned = fam(ctx, appearance, motion, params.align);
      return fat(ctx, aligned.appearance, aligned.motion, params.adapt).fused;
    }
    case Fusion::FamOnly: {
      AlignedPair<T> aligned = fam(ctx, appearance, motion, params.align);
      return fuse_sum(aligned.appearance, aligned.motion);
    }
    case Fusion::FatOnly:
      return fat(ctx, appearance, motion, params.adapt).fused;
    case Fusion::Add:
      return fuse_sum(appearance, motion);
    case Fusion::FrameOnly:
      return appearance;
    case Fusion::FlowOnly:
      return motion;
  }
  throw ContractError("hfan_stage: unknown fusion mode");
}

#define HFAN_INSTANTIATE_ADAPT(T)                                                                  \
  template Var<T> fuse_sum(const Var<T>&, const Var<T>&);                                          \
  template struct FatParams<T>;                                                                    \
  template struct StageParams<T>;                                                                  \
  template FatResult<T> fat(Context<T>&, const Var<T>&, const Var<T>&, FatParams<T>&);             \
  template Var<T> hfan_stage(Context<T>&, const Var<T>&, const Var<T>&, StageParams<T>&);

HFAN_INSTANTIATE_ADAPT(float)
HFAN_INSTANTIATE_ADAPT(double)

}  // namespace hfan

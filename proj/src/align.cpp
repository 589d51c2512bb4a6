#include "hfan/align.hpp"

#include <algorithm>
#include <cmath>

namespace hfan {

std::size_t attention_width(std::size_t channels, std::size_t requested) {
  if (requested == 0) throw ConfigError("attention width must be positive");
  return std::min(requested, channels);
}

template <typename T>
CoarseSegHead<T>::CoarseSegHead(const std::string& name, std::size_t channels, std::uint64_t seed)
    : block(name, channels, kNumClasses, seed) {}

template <typename T>
Var<T> coarse_seg(Context<T>& ctx, const Var<T>& appearance, CoarseSegHead<T>& head) {
  return head.block(ctx, appearance);
}

template <typename T>
Var<T> css(const Var<T>& appearance, const Var<T>& coarse) {
  const Shape& is = appearance.shape();
  const Shape& ps = coarse.shape();
  if (is.size() != 4 || ps.size() != 4 || is[0] != ps[0] || is[2] != ps[2] || is[3] != ps[3]) {
    throw DimensionError("css: appearance " + shape_str(is) + " and coarse mask " + shape_str(ps) +
                         " disagree spatially");
  }
  const std::size_t n = is[0], c = is[1], pixels = is[2] * is[3], k = ps[1];
  Var<T> feats = ops::reshape(appearance, {n, c, pixels});
  Var<T> weights = ops::softmax(ops::reshape(coarse, {n, k, pixels}), 2);
  return ops::bmm(feats, ops::transpose_last2(weights));
}

template <typename T>
AttentionResult<T> attend(const Var<T>& query, const Var<T>& key, const Var<T>& value, T alpha) {
  const Shape& qs = query.shape();
  const Shape& ks = key.shape();
  if (qs.size() != 4 || ks.size() != 3 || value.shape() != ks || ks[0] != qs[0] || ks[1] != qs[1]) {
    throw DimensionError("attend: query " + shape_str(qs) + ", key " + shape_str(ks) + ", value " +
                         shape_str(value.shape()));
  }
  const std::size_t n = qs[0], d = qs[1], h = qs[2], w = qs[3];
  Var<T> q = ops::transpose_last2(ops::reshape(query, {n, d, h * w}));
  Var<T> logits = ops::scale(ops::bmm(q, key), alpha);
  Var<T> weights = ops::softmax(logits, 2);
  Var<T> ctx = ops::bmm(weights, ops::transpose_last2(value));
  return {weights, ops::reshape(ops::transpose_last2(ctx), {n, d, h, w})};
}

namespace {

std::size_t checked_width(const std::string& name, std::size_t d) {
  if (d == 0) throw ConfigError(name + ": attention width must be positive");
  return d;
}

}  // namespace

template <typename T>
PocParams<T>::PocParams(const std::string& name, std::size_t c, std::size_t d, std::uint64_t seed)
    : query(name + ".query", c, checked_width(name, d), seed),
      key(name + ".key", c, d, seed),
      value(name + ".value", c, d, seed),
      out(name + ".out", c + d, c, seed),
      channels(c) {}

template <typename T>
void PocParams<T>::collect(ModuleState<T>& s) {
  query.collect(s);
  key.collect(s);
  value.collect(s);
  out.collect(s);
}

template <typename T>
Var<T> poc(Context<T>& ctx, const Var<T>& x, const Var<T>& semantics, PocParams<T>& params,
           AttentionResult<T>* attention) {
  const Shape& xs = x.shape();
  const Shape& ms = semantics.shape();
  if (xs.size() != 4 || ms.size() != 3 || ms[0] != xs[0] || ms[1] != xs[1] || xs[1] != params.channels) {
    throw DimensionError("poc: features " + shape_str(xs) + " and semantics " + shape_str(ms) +
                         " do not match a " + std::to_string(params.channels) + "-channel block");
  }
  const std::size_t n = ms[0], c = ms[1], k = ms[2];
  Var<T> m4 = ops::reshape(semantics, {n, c, k, 1});
  Var<T> q = params.query(ctx, x);
  const std::size_t d = q.shape()[1];
  Var<T> key = ops::reshape(params.key(ctx, m4), {n, d, k});
  Var<T> value = ops::reshape(params.value(ctx, m4), {n, d, k});
  const T alpha = T(1) / std::sqrt(static_cast<T>(c));
  AttentionResult<T> att = attend(q, key, value, alpha);
  if (attention) *attention = att;
  return params.out(ctx, ops::concat<T>({x, att.context}, 1));
}

template <typename T>
FamParams<T>::FamParams(const std::string& name, std::size_t channels, std::size_t d, bool share,
                        std::uint64_t seed)
    : coarse(name + ".coarse", channels, seed),
      poc_appearance(name + (share ? ".poc" : ".poc_app"), channels, d, seed),
      share_poc(share) {
  if (!share) poc_motion = PocParams<T>(name + ".poc_mot", channels, d, seed);
}

template <typename T>
void FamParams<T>::collect(ModuleState<T>& s) {
  coarse.collect(s);
  poc_appearance.collect(s);
  if (!share_poc) poc_motion.collect(s);
}

template <typename T>
AlignedPair<T> fam(Context<T>& ctx, const Var<T>& appearance, const Var<T>& motion, FamParams<T>& params) {
  if (appearance.shape() != motion.shape()) {
    throw DimensionError("fam: appearance " + shape_str(appearance.shape()) + " vs motion " +
                         shape_str(motion.shape()));
  }
  Var<T> p = coarse_seg(ctx, appearance, params.coarse);
  Var<T> m = css(appearance, p);
  if (!params.share_poc) {
    return {poc(ctx, appearance, m, params.poc_appearance), poc(ctx, motion, m, params.poc_motion)};
  }
  // One shared block: run both streams as a single batch so batch statistics cover both.
  const std::size_t n = appearance.shape()[0];
  Var<T> both = ops::concat<T>({appearance, motion}, 0);
  Var<T> m2 = ops::concat<T>({m, m}, 0);
  Var<T> out = poc(ctx, both, m2, params.poc_appearance);
  return {ops::slice(out, 0, 0, n), ops::slice(out, 0, n, 2 * n)};
}

#define HFAN_INSTANTIATE_ALIGN(T)                                                                   \
  template struct CoarseSegHead<T>;                                                                 \
  template struct PocParams<T>;                                                                     \
  template struct FamParams<T>;                                                                     \
  template Var<T> coarse_seg(Context<T>&, const Var<T>&, CoarseSegHead<T>&);                        \
  template Var<T> css(const Var<T>&, const Var<T>&);                                                \
  template AttentionResult<T> attend(const Var<T>&, const Var<T>&, const Var<T>&, T);               \
  template Var<T> poc(Context<T>&, const Var<T>&, const Var<T>&, PocParams<T>&, AttentionResult<T>*); \
  template AlignedPair<T> fam(Context<T>&, const Var<T>&, const Var<T>&, FamParams<T>&);

HFAN_INSTANTIATE_ALIGN(float)
HFAN_INSTANTIATE_ALIGN(double)

}  // namespace hfan

#include "hfan/train.hpp"

#include <algorithm>
#include <cmath>

namespace hfan {

template <typename T>
AdamW<T>::AdamW(const std::vector<Parameter<T>*>& params, AdamWConfig cfg) : params_(params), cfg_(cfg) {
  for (Parameter<T>* p : params_) {
    m_.push_back(Tensor<T>::zeros(p->value.shape()));
    v_.push_back(Tensor<T>::zeros(p->value.shape()));
  }
}

template <typename T>
void AdamW<T>::step(double lr) {
  ++steps_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, double(steps_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, double(steps_));
  const T decay = static_cast<T>(1.0 - lr * cfg_.weight_decay);
  const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
  const T step_size = static_cast<T>(lr / c1);
  const T root_c2 = static_cast<T>(std::sqrt(c2));
  const T eps = static_cast<T>(cfg_.eps);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    T* p = params_[k]->value.raw();
    const T* g = params_[k]->grad.raw();
    T* m = m_[k].raw();
    T* v = v_[k].raw();
    for (std::size_t i = 0; i < m_[k].numel(); ++i) {
      p[i] *= decay;
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      p[i] -= step_size * m[i] / (std::sqrt(v[i]) / root_c2 + eps);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

double poly_lr(double lr0, std::uint64_t t, std::uint64_t total, double power) {
  if (total == 0 || t >= total) return 0.0;
  return lr0 * std::pow(1.0 - double(t) / double(total), power);
}

double train_step(SegNet<float>& model, AdamW<float>& optim, const Batch& batch, double lr) {
  for (Parameter<float>* p : optim.params()) p->zero_grad();
  Tape<float> tape;
  tape.set_check_finite(true);
  Context<float> ctx{tape, ops::Mode::Train};
  Var<float> fr, fl;
  if (uses_frames(model.config.fusion)) fr = tape.constant(batch.frames);
  if (uses_flow(model.config.fusion)) fl = tape.constant(batch.flows);
  Var<float> loss = ce_loss(model.forward(ctx, fr, fl), batch.masks);
  const double value = loss.value()[0];
  tape.backward(loss);
  for (Parameter<float>* p : optim.params()) {
    if (!p->grad.all_finite()) throw NumericalError("train_step: non-finite gradient in " + p->name);
  }
  optim.step(lr);
  return value;
}

AugmentParams draw_augment(Rng& rng, std::size_t h, std::size_t w, std::size_t crop) {
  AugmentParams p;
  p.flip = rng.bernoulli(0.5);
  p.scale = rng.uniform(0.5, 2.0);
  const double need = double(crop) / double(std::min(h, w));
  p.scale = std::max(p.scale, need);
  const auto sh = static_cast<std::size_t>(std::lround(double(h) * p.scale));
  const auto sw = static_cast<std::size_t>(std::lround(double(w) * p.scale));
  p.top = rng.index(std::max<std::size_t>(sh, crop) - crop + 1);
  p.left = rng.index(std::max<std::size_t>(sw, crop) - crop + 1);
  return p;
}

Tensor<float> flip_horizontal(const Tensor<float>& x) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<float> y(x.shape());
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) y[(k * h + i) * w + j] = x[(k * h + i) * w + (w - 1 - j)];
  return y;
}

namespace {

Tensor<float> crop_chw(const Tensor<float>& x, std::size_t top, std::size_t left, std::size_t size) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (top + size > h || left + size > w) {
    throw ContractError("augment: crop " + std::to_string(size) + " at (" + std::to_string(top) + ", " +
                        std::to_string(left) + ") exceeds " + shape_str(x.shape()));
  }
  Tensor<float> y({c, size, size});
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < size; ++i)
      for (std::size_t j = 0; j < size; ++j) y[(k * size + i) * size + j] = x[(k * h + top + i) * w + left + j];
  return y;
}

Tensor<float> resize_chw(const Tensor<float>& x, std::size_t h, std::size_t w, bool nearest) {
  Tensor<float> x4 = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  Tensor<float> y = nearest ? ops::nearest_resize_value(x4, h, w) : ops::bilinear_resize_value(x4, h, w);
  return y.reshaped({x.dim(0), h, w});
}

}  // namespace

Triple apply_augment(const Triple& in, const AugmentParams& p, std::size_t crop) {
  const Shape& s = in.frame.shape();
  if (s.size() != 3 || in.flow.shape() != s || in.mask.shape() != Shape{1, s[1], s[2]}) {
    throw DimensionError("augment: frame " + shape_str(s) + ", flow " + shape_str(in.flow.shape()) + ", mask " +
                         shape_str(in.mask.shape()));
  }
  const auto sh = static_cast<std::size_t>(std::lround(double(s[1]) * p.scale));
  const auto sw = static_cast<std::size_t>(std::lround(double(s[2]) * p.scale));
  Triple out{resize_chw(in.frame, sh, sw, false), resize_chw(in.flow, sh, sw, false),
             resize_chw(in.mask, sh, sw, true)};
  if (p.flip) {
    out.frame = flip_horizontal(out.frame);
    out.flow = flip_horizontal(out.flow);
    out.mask = flip_horizontal(out.mask);
    const std::size_t plane = sh * sw;
    for (std::size_t i = 0; i < plane; ++i) out.flow[i] = 1.0f - out.flow[i];
  }
  out.frame = crop_chw(out.frame, p.top, p.left, crop);
  out.flow = crop_chw(out.flow, p.top, p.left, crop);
  out.mask = crop_chw(out.mask, p.top, p.left, crop);
  return out;
}

}  // namespace hfan

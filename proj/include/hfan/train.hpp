#pragma once

// Optimisation: AdamW with decoupled weight decay, the poly learning-rate schedule,
// one training step, and the flip/rescale/crop augmentation.

#include <cstdint>
#include <vector>

#include "hfan/model.hpp"
#include "hfan/rng.hpp"

namespace hfan {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// PyTorch-style AdamW: p *= 1 - lr * wd, then the bias-corrected Adam step.
template <typename T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(const std::vector<Parameter<T>*>& params, AdamWConfig cfg = {});

  void step(double lr);

  std::uint64_t steps() const noexcept { return steps_; }
  const AdamWConfig& config() const noexcept { return cfg_; }
  const std::vector<Parameter<T>*>& params() const noexcept { return params_; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  void set_steps(std::uint64_t s) { steps_ = s; }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<Tensor<T>> m_, v_;
  AdamWConfig cfg_;
  std::uint64_t steps_ = 0;
};

inline constexpr double kPolyPower = 0.9;

/// lr0 * (1 - t / total)^0.9, clamped to 0 at and beyond the end.
double poly_lr(double lr0, std::uint64_t t, std::uint64_t total, double power = kPolyPower);

/// A training batch: frames and flow images N x 3 x H x W, labels N x 1 x H x W.
struct Batch {
  Tensor<float> frames;
  Tensor<float> flows;
  Tensor<float> masks;
};

/// Forward, loss, backward and one optimiser step at learning rate `lr`. Returns the
/// loss before the update. Throws NumericalError naming the op on a non-finite value.
double train_step(SegNet<float>& model, AdamW<float>& optim, const Batch& batch, double lr);

/// One augmentation draw.
struct AugmentParams {
  bool flip = false;
  double scale = 1.0;
  std::size_t top = 0;
  std::size_t left = 0;
};

/// Flip with probability 0.5, scale in [0.5, 2] raised as needed so the resized image
/// covers the crop, then a uniform crop position.
AugmentParams draw_augment(Rng& rng, std::size_t h, std::size_t w, std::size_t crop);

struct Triple {
  Tensor<float> frame;  // 3 x H x W
  Tensor<float> flow;   // 3 x H x W flow image
  Tensor<float> mask;   // 1 x H x W
};

/// Applies the same geometry to all three. Images and flow use bilinear resampling,
/// masks nearest. A flip also maps the horizontal flow channel R to 1 - R.
Triple apply_augment(const Triple& in, const AugmentParams& p, std::size_t crop);

/// Horizontal mirror of a C x H x W tensor.
Tensor<float> flip_horizontal(const Tensor<float>& x);

}  // namespace hfan

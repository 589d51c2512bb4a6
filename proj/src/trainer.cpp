#include "hfan/trainer.hpp"

#include <algorithm>

namespace hfan {

std::vector<Sequence> load_split(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "meta")) dirs.push_back(e.path());
  if (dirs.empty()) throw DataError("no sequences under " + dir.string());
  std::sort(dirs.begin(), dirs.end());
  std::vector<Sequence> out;
  for (const auto& d : dirs) out.push_back({d.filename().string(), synth::read_sample(d)});
  return out;
}

void TrainConfig::validate() const {
  if (!(lr0 >= 0.0)) throw ConfigError("train.lr0 must be non-negative");
  if (batch == 0) throw ConfigError("train.batch must be positive");
  if (crop == 0 || crop % kInputMultiple != 0) {
    throw ConfigError("train.crop must be a positive multiple of " + std::to_string(kInputMultiple));
  }
}

Batch draw_batch(const std::vector<Sequence>& data, const TrainConfig& cfg, std::uint64_t t) {
  if (data.empty()) throw ContractError("draw_batch: empty dataset");
  Rng rng(derive_seed(cfg.seed, t));
  const std::size_t c = cfg.crop, plane = c * c;
  Batch b{Tensor<float>({cfg.batch, 3, c, c}), Tensor<float>({cfg.batch, 3, c, c}), Tensor<float>({cfg.batch, 1, c, c})};
  for (std::size_t n = 0; n < cfg.batch; ++n) {
    const synth::VideoSample& s = data[rng.index(data.size())].sample;
    if (s.masks.empty()) throw DataError("training sequence without masks");
    const std::size_t f = rng.index(s.length());
    Triple tri{synth::frame_at(s.frames, f), synth::frame_at(s.flow_rgb, synth::flow_index(f, s.length())),
               synth::frame_at(s.masks, f)};
    AugmentParams p;
    if (cfg.augment) {
      p = draw_augment(rng, s.height(), s.width(), c);
    } else {
      p.scale = double(c) / double(std::min(s.height(), s.width()));
    }
    tri = apply_augment(tri, p, c);
    std::copy(tri.frame.storage().begin(), tri.frame.storage().end(), b.frames.raw() + n * 3 * plane);
    std::copy(tri.flow.storage().begin(), tri.flow.storage().end(), b.flows.raw() + n * 3 * plane);
    std::copy(tri.mask.storage().begin(), tri.mask.storage().end(), b.masks.raw() + n * plane);
  }
  return b;
}

void run_training(SegNet<float>& model, AdamW<float>& optim, const std::vector<Sequence>& data,
                  const TrainConfig& cfg, const StepHook& hook, std::uint64_t stop_at) {
  cfg.validate();
  for (std::uint64_t t = optim.steps(); t < std::min(cfg.iters, stop_at); ++t) {
    const double lr = poly_lr(cfg.lr0, t, cfg.iters);
    const double loss = train_step(model, optim, draw_batch(data, cfg, t), lr);
    if (hook) hook(t, loss, lr);
  }
}

SequencePrediction predict_sequence(SegNet<float>& model, const synth::VideoSample& seq,
                                    const std::vector<double>& scales, std::size_t chunk) {
  const std::size_t T = seq.length(), H = seq.height(), W = seq.width(), plane = H * W;
  if (seq.flow_rgb.empty() || seq.flow_rgb.dim(0) + 1 != T) {
    throw DataError("sequence needs " + std::to_string(T - 1) + " flow images");
  }
  SequencePrediction out{Tensor<float>({T, 1, H, W}), Tensor<float>({T, 1, H, W})};
  for (std::size_t t0 = 0; t0 < T; t0 += chunk) {
    const std::size_t n = std::min(chunk, T - t0);
    Tensor<float> fr({n, 3, H, W}), fl({n, 3, H, W});
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t t = t0 + k, fi = synth::flow_index(t, T);
      std::copy_n(seq.frames.raw() + t * 3 * plane, 3 * plane, fr.raw() + k * 3 * plane);
      std::copy_n(seq.flow_rgb.raw() + fi * 3 * plane, 3 * plane, fl.raw() + k * 3 * plane);
    }
    const PredictedMask pm = predict(model, fr, fl, scales);
    for (std::size_t k = 0; k < n; ++k) {
      std::copy_n(pm.labels.raw() + k * plane, plane, out.labels.raw() + (t0 + k) * plane);
      std::copy_n(pm.probs.raw() + (k * 2 + 1) * plane, plane, out.foreground.raw() + (t0 + k) * plane);
    }
  }
  return out;
}

}  // namespace hfan

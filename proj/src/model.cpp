#include "hfan/model.hpp"

#include <cmath>

namespace hfan {

void ModelConfig::validate() const {
  for (std::size_t i = 0; i < kNumStages; ++i) {
    if (stage_channels[i] == 0) throw ConfigError("model.stage_channels: widths must be positive");
    if (i > 0 && stage_channels[i] < stage_channels[i - 1]) {
      throw ConfigError("model.stage_channels: widths must be non-decreasing");
    }
  }
  if (decoder_dim == 0) throw ConfigError("model.decoder_dim must be positive");
  if (attn_width == 0) throw ConfigError("model.attn_width must be positive");
}

template <typename T>
Encoder<T>::Encoder(const std::string& name, const ModelConfig& cfg)
    : stem(name + ".stem", 3, cfg.stage_channels[0], cfg.seed) {
  std::size_t in = cfg.stage_channels[0];
  for (std::size_t i = 0; i < kNumStages; ++i) {
    stages[i] = ConvBnRelu<T>(name + ".stage" + std::to_string(i + 1), in, cfg.stage_channels[i], cfg.seed);
    in = cfg.stage_channels[i];
  }
}

template <typename T>
std::array<Var<T>, kNumStages> Encoder<T>::operator()(Context<T>& ctx, const Var<T>& image) {
  const Shape& s = image.shape();
  if (s.size() != 4 || s[1] != 3) throw DimensionError("encoder: expected N x 3 x H x W, got " + shape_str(s));
  if (s[2] % kInputMultiple != 0 || s[3] % kInputMultiple != 0 || s[2] == 0 || s[3] == 0) {
    throw ContractError("encoder: input " + shape_str(s) + " is not a multiple of 32 in H and W");
  }
  std::array<Var<T>, kNumStages> out;
  Var<T> h = ops::avg_pool2(ops::avg_pool2(stem(ctx, image)));
  for (std::size_t i = 0; i < kNumStages; ++i) {
    if (i > 0) h = ops::avg_pool2(h);
    h = stages[i](ctx, h);
    out[i] = h;
  }
  return out;
}

template <typename T>
void Encoder<T>::collect(ModuleState<T>& s) {
  stem.collect(s);
  for (auto& st : stages) st.collect(s);
}

template <typename T>
Decoder<T>::Decoder(const std::string& name, const ModelConfig& cfg)
    : fuse(name + ".fuse", kNumStages * cfg.decoder_dim, cfg.decoder_dim, cfg.seed),
      classify(name + ".classify", cfg.decoder_dim, kNumClasses, cfg.seed) {
  for (std::size_t i = 0; i < kNumStages; ++i) {
    project[i] = Conv1x1Layer<T>(name + ".project" + std::to_string(i + 1), cfg.stage_channels[i], cfg.decoder_dim,
                                 cfg.seed);
  }
}

template <typename T>
Var<T> Decoder<T>::operator()(Context<T>& ctx, const std::array<Var<T>, kNumStages>& fused, std::size_t out_h,
                              std::size_t out_w) {
  for (std::size_t i = 0; i < kNumStages; ++i) {
    if (!fused[i].valid()) throw ContractError("decoder: stage " + std::to_string(i + 1) + " is missing");
  }
  const std::size_t h = fused[0].shape()[2], w = fused[0].shape()[3];
  std::vector<Var<T>> parts;
  for (std::size_t i = 0; i < kNumStages; ++i) {
    parts.push_back(ops::bilinear_resize(project[i](ctx, fused[i]), h, w));
  }
  Var<T> merged = fuse(ctx, ops::concat(parts, 1));
  return ops::bilinear_resize(classify(ctx, merged), out_h, out_w);
}

template <typename T>
void Decoder<T>::collect(ModuleState<T>& s) {
  for (auto& p : project) p.collect(s);
  fuse.collect(s);
  classify.collect(s);
}

template <typename T>
SegNet<T>::SegNet(const ModelConfig& cfg) : config(cfg) {
  cfg.validate();
  if (cfg.share_encoder) {
    frame_encoder = Encoder<T>("encoder", cfg);
  } else {
    if (uses_frames(cfg.fusion)) frame_encoder = Encoder<T>("encoder.frame", cfg);
    if (uses_flow(cfg.fusion)) flow_encoder = Encoder<T>("encoder.flow", cfg);
  }
  for (std::size_t i = 0; i < kNumStages; ++i) {
    const std::size_t c = cfg.stage_channels[i];
    stages[i] = StageParams<T>("stage" + std::to_string(i + 1), c, attention_width(c, cfg.attn_width),
                               cfg.share_poc, cfg.fusion, cfg.seed);
  }
  decoder = Decoder<T>("decoder", cfg);
}

template <typename T>
std::array<std::array<Var<T>, kNumStages>, 2> SegNet<T>::encode(Context<T>& ctx, const Var<T>& frames,
                                                                const Var<T>& flows) {
  const bool want_frames = uses_frames(config.fusion), want_flow = uses_flow(config.fusion);
  if (want_frames && !frames.valid()) throw ContractError("segnet: fusion mode needs frames");
  if (want_flow && !flows.valid()) throw ContractError("segnet: fusion mode needs flow");
  std::array<std::array<Var<T>, kNumStages>, 2> out;
  if (config.share_encoder && want_frames && want_flow) {
    if (frames.shape() != flows.shape()) {
      throw DimensionError("segnet: frames " + shape_str(frames.shape()) + " vs flow " + shape_str(flows.shape()));
    }
    // One pass over both inputs so batch statistics are shared.
    const std::size_t n = frames.shape()[0];
    auto both = frame_encoder(ctx, ops::concat<T>({frames, flows}, 0));
    for (std::size_t i = 0; i < kNumStages; ++i) {
      out[0][i] = ops::slice(both[i], 0, 0, n);
      out[1][i] = ops::slice(both[i], 0, n, 2 * n);
    }
    return out;
  }
  Encoder<T>& motion = config.share_encoder ? frame_encoder : flow_encoder;
  if (want_frames) out[0] = frame_encoder(ctx, frames);
  if (want_flow) out[1] = motion(ctx, flows);
  return out;
}

template <typename T>
Var<T> SegNet<T>::forward(Context<T>& ctx, const Var<T>& frames, const Var<T>& flows) {
  auto feats = encode(ctx, frames, flows);
  std::array<Var<T>, kNumStages> fused;
  for (std::size_t i = 0; i < kNumStages; ++i) fused[i] = hfan_stage(ctx, feats[0][i], feats[1][i], stages[i]);
  const Var<T>& any = frames.valid() ? frames : flows;
  return decoder(ctx, fused, any.shape()[2], any.shape()[3]);
}

template <typename T>
ModuleState<T> SegNet<T>::state() {
  ModuleState<T> s;
  if (config.share_encoder || uses_frames(config.fusion)) frame_encoder.collect(s);
  if (!config.share_encoder && uses_flow(config.fusion)) flow_encoder.collect(s);
  for (auto& st : stages) st.collect(s);
  decoder.collect(s);
  return s;
}

template <typename T>
Var<T> ce_loss(const Var<T>& logits, const Tensor<T>& labels) {
  for (T v : labels.storage()) {
    if (v != T(0) && v != T(1)) throw DataError("ce_loss: labels must be 0 or 1");
  }
  return ops::softmax_cross_entropy(logits, labels);
}

Tensor<float> argmax_labels(const Tensor<float>& probs) {
  const Shape& s = probs.shape();
  if (s.size() != 4 || s[1] != kNumClasses) throw DimensionError("argmax_labels: got " + shape_str(s));
  const std::size_t plane = s[2] * s[3];
  Tensor<float> y({s[0], 1, s[2], s[3]});
  for (std::size_t n = 0; n < s[0]; ++n)
    for (std::size_t p = 0; p < plane; ++p) {
      const float bg = probs[(n * 2) * plane + p], fg = probs[(n * 2 + 1) * plane + p];
      y[n * plane + p] = fg > bg ? 1.0f : 0.0f;
    }
  return y;
}

std::size_t snapped_extent(std::size_t extent, double scale) {
  if (!(scale > 0.0)) throw ContractError("predict: scales must be positive");
  const double units = std::round(static_cast<double>(extent) * scale / double(kInputMultiple));
  const auto out = static_cast<std::size_t>(units) * kInputMultiple;
  if (out < kInputMultiple) {
    throw ContractError("predict: scale " + std::to_string(scale) + " maps extent " + std::to_string(extent) +
                        " below 32");
  }
  return out;
}

PredictedMask predict(SegNet<float>& model, const Tensor<float>& frames, const Tensor<float>& flows,
                      const std::vector<double>& scales) {
  if (scales.empty()) throw ContractError("predict: no scales given");
  const Shape& s = frames.empty() ? flows.shape() : frames.shape();
  if (s.size() != 4) throw DimensionError("predict: expected N x 3 x H x W, got " + shape_str(s));
  const std::size_t n = s[0], h = s[2], w = s[3];
  std::vector<double> acc(n * kNumClasses * h * w, 0.0);
  for (double scale : scales) {
    const std::size_t sh = snapped_extent(h, scale), sw = snapped_extent(w, scale);
    Tape<float> tape;
    tape.set_grad_enabled(false);
    Context<float> ctx{tape, ops::Mode::Eval};
    Var<float> fr, fl;
    if (uses_frames(model.config.fusion)) fr = tape.constant(ops::bilinear_resize_value(frames, sh, sw));
    if (uses_flow(model.config.fusion)) fl = tape.constant(ops::bilinear_resize_value(flows, sh, sw));
    Var<float> logits = model.forward(ctx, fr, fl);
    Tensor<float> probs = ops::bilinear_resize_value(ops::softmax_value(logits.value(), 1), h, w);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += probs[i];
  }
  PredictedMask out;
  out.probs = Tensor<float>({n, kNumClasses, h, w});
  for (std::size_t i = 0; i < acc.size(); ++i) out.probs[i] = static_cast<float>(acc[i] / double(scales.size()));
  out.labels = argmax_labels(out.probs);
  return out;
}

#define HFAN_INSTANTIATE_MODEL(T)  \
  template struct Encoder<T>;      \
  template struct Decoder<T>;      \
  template struct SegNet<T>;       \
  template Var<T> ce_loss(const Var<T>&, const Tensor<T>&);

HFAN_INSTANTIATE_MODEL(float)
HFAN_INSTANTIATE_MODEL(double)

}  // namespace hfan

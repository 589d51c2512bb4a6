#pragma once

// Dataset access and the training loop over synthvid-layout directories.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "hfan/synthvid.hpp"
#include "hfan/train.hpp"

namespace hfan {

struct Sequence {
  std::string name;
  synth::VideoSample sample;
};

/// Every subdirectory of `dir` holding a `meta` file, sorted by name. Throws
/// DataError when `dir` does not exist or holds no sequence.
std::vector<Sequence> load_split(const std::filesystem::path& dir);

struct TrainConfig {
  double lr0 = 3e-4;
  std::uint64_t iters = 3000;
  std::size_t batch = 8;
  std::size_t crop = 64;
  std::uint64_t seed = 0;
  bool augment = true;

  void validate() const;
};

/// The batch for iteration t. All randomness comes from derive_seed(seed, t), so a
/// resumed run sees the same batches as an uninterrupted one.
Batch draw_batch(const std::vector<Sequence>& data, const TrainConfig& cfg, std::uint64_t t);

using StepHook = std::function<void(std::uint64_t t, double loss, double lr)>;

/// Runs iterations optim.steps() .. min(cfg.iters, stop_at) - 1, calling `hook` after
/// each step. Stopping early leaves the schedule untouched, so a later call resumes it.
void run_training(SegNet<float>& model, AdamW<float>& optim, const std::vector<Sequence>& data,
                  const TrainConfig& cfg, const StepHook& hook = {},
                  std::uint64_t stop_at = std::numeric_limits<std::uint64_t>::max());

/// Per-frame prediction for one sequence; frame t is paired with flow_index(t, T).
/// Returns labels T x 1 x H x W and foreground probabilities T x 1 x H x W.
struct SequencePrediction {
  Tensor<float> labels;
  Tensor<float> foreground;
};
SequencePrediction predict_sequence(SegNet<float>& model, const synth::VideoSample& seq,
                                    const std::vector<double>& scales = {1.0}, std::size_t chunk = 8);

}  // namespace hfan

#pragma once

// Flat key=value run configuration shared by the command-line tools.
//
//   model.stage_channels = 8,16,32,64
//   train.iters = 3000   # comments run to end of line
//
// Unknown keys and malformed values raise ConfigError naming the line.

#include <cstdint>
#include <string>
#include <vector>

#include "hfan/model.hpp"
#include "hfan/synthvid.hpp"
#include "hfan/trainer.hpp"

namespace hfan {

struct DataConfig {
  std::size_t train_count = 20;
  std::size_t val_count = 5;
  std::size_t frames = 24;
  std::size_t height = 64;
  std::size_t width = 64;
  /// Train sequence i uses seed + i, validation sequence i uses seed + train_count + i.
  std::uint64_t seed = 1000;
  double noise = 0.0;
  synth::FlowFailure flow_failure = synth::FlowFailure::None;
  double flow_sigma = 2.0;
  double vmax = synth::kDefaultVmax;
};

struct EvalConfig {
  std::vector<double> scales{1.0};
  double tol = 0;  // 0 picks the default from the image diagonal
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t checkpoint_every = 500;
  DataConfig data;
  EvalConfig eval;

  /// Applies one assignment; `where` prefixes error messages.
  void set(const std::string& key, const std::string& value, const std::string& where = "");
  /// Parses a whole file body on top of the current values.
  void parse(const std::string& text, const std::string& source = "config");
  /// Every key with its resolved value, in a fixed order; parse(to_text()) round-trips.
  std::string to_text() const;
  void validate() const;
};

RunConfig load_run_config(const std::string& path);

/// Scene parameters for dataset sequence `seed` under this data config.
synth::SceneSpec scene_for(const DataConfig& d, std::uint64_t seed);

}  // namespace hfan

#pragma once

// The hfan subcommands as functions, so tests can drive them without a subprocess.
// Each returns the process exit code; library errors propagate as exceptions and
// exit_code() maps them.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hfan/runconfig.hpp"

namespace hfan::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

std::string version();

/// 1 for configuration and usage problems, 2 for data and format errors, 3 for numerical failure.
int exit_code(const std::exception& e);

/// The config file (if any) with `key=value` overrides applied in order, validated.
RunConfig resolve_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides);

/// Resolved config plus a version comment, as written into every output directory.
void write_resolved_config(const fs::path& dir, const RunConfig& cfg);

int cmd_gen(const RunConfig& cfg, const fs::path& out, bool force, std::ostream& log);

struct TrainOptions {
  fs::path data;  // dataset root holding train/
  fs::path run;   // receives config.txt, loss.log and model.ckpt
  bool resume = false;
  std::optional<std::uint64_t> stop_at;  // pause after this many iterations
};
int cmd_train(const RunConfig& cfg, const TrainOptions& opt, std::ostream& log);

struct InferOptions {
  fs::path checkpoint;
  fs::path input;  // one sequence directory, or a directory of sequences
  fs::path out;
  std::optional<std::vector<double>> scales;  // overrides eval.scales
  bool probabilities = false;
};
int cmd_infer(const RunConfig& cfg, const InferOptions& opt, std::ostream& log);

/// Loads OUT/<seq>/masks (and prob/ when present) written by cmd_infer.
struct PredictionDir {
  Tensor<float> masks;
  std::optional<Tensor<float>> prob;
};
PredictionDir read_prediction(const fs::path& seq_dir);

int cmd_eval(const RunConfig& cfg, const fs::path& pred, const fs::path& gt, const fs::path& out, std::ostream& log);

int cmd_gradcheck(bool corrupt, std::ostream& log);

/// Binary P5 image, maxval 255, foreground 255.
void write_pgm(const fs::path& path, const Tensor<float>& mask);

}  // namespace hfan::cli

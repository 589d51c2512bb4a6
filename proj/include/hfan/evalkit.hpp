#pragma once

// Segmentation metrics: region similarity J, boundary accuracy F with per-sequence
// Mean/Recall/Decay, and the saliency metrics S, E_max, F_max and MAE.

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hfan/tensor.hpp"

namespace hfan::eval {

/// |pred & gt| / |pred | gt|; 1 when both are empty. Masks of equal shape with values
/// in {0, 1}; otherwise DataError.
double jaccard(const Tensor<float>& pred, const Tensor<float>& gt);

/// ceil(0.008 * image diagonal).
double default_tolerance(std::size_t h, std::size_t w);

/// Foreground pixels with a 4-neighbour of a different label (outside the image counts
/// as background). `mask` is H x W or 1 x H x W.
std::vector<unsigned char> boundary_map(const Tensor<float>& mask);

/// Boundary F-measure. A boundary pixel is matched when the other boundary has a
/// pixel within Euclidean distance `tol`. Empty vs empty scores 1.
double boundary_f(const Tensor<float>& pred, const Tensor<float>& gt, double tol);

struct Summary {
  double mean = 0;
  double recall = 0;
  double decay = 0;  // NaN for fewer than 4 frames
};

/// Mean; fraction of scores > 0.5; mean of the first quarter minus mean of the last
/// quarter, with the sequence split into 4 near-equal contiguous parts.
Summary summarize(const std::vector<double>& scores);

inline constexpr std::size_t kThresholds = 256;
inline constexpr double kBeta2 = 0.3;
inline constexpr double kStructureAlpha = 0.5;

/// Per-frame saliency curves, averaged over frames before taking maxima.
struct VsodFrame {
  double mae = 0;
  double s = 0;
  std::vector<double> f_curve;  // kThresholds entries, foreground where prob > k / 255
  std::vector<double> e_curve;
};

VsodFrame vsod_frame(const Tensor<float>& prob, const Tensor<float>& gt);

struct Vsod {
  double s = 0;
  double e_max = 0;
  double f_max = 0;
  double mae = 0;
};

Vsod vsod_combine(const std::vector<VsodFrame>& frames);

/// Convenience for a single map.
Vsod vsod_metrics(const Tensor<float>& prob, const Tensor<float>& gt);

double s_measure(const Tensor<float>& prob, const Tensor<float>& gt, double alpha = kStructureAlpha);
double e_measure(const std::vector<unsigned char>& fm, const std::vector<unsigned char>& gt);

struct SequenceReport {
  std::string name;
  Summary j, f;
  double jf_mean = 0;
  std::optional<Vsod> vsod;
};

struct EvalReport {
  std::vector<SequenceReport> sequences;
  SequenceReport global;  // per-sequence values averaged, name "global"
};

/// Scores a sequence of T frames: masks T x 1 x H x W and optional foreground
/// probabilities of the same shape. Frame-count mismatch raises DataError naming it.
SequenceReport evaluate_sequence(const std::string& name, const Tensor<float>& pred, const Tensor<float>& gt,
                                 const Tensor<float>* prob = nullptr, std::optional<double> tol = std::nullopt);

/// Averages per-sequence values. Throws ContractError on empty input.
EvalReport aggregate(std::vector<SequenceReport> sequences);

void write_table(std::ostream& os, const EvalReport& r);
/// `metric.sequence=value` lines, e.g. `J_mean.global=0.912`.
void write_key_values(std::ostream& os, const EvalReport& r);

}  // namespace hfan::eval

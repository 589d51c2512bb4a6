#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hfan/autodiff.hpp"

namespace hfan {

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;
/// Denominator floor, per unit of |loss|, so components with near-zero gradient are
/// judged absolutely.
inline constexpr double kGradCheckFloor = 1e-5;

struct GradCheckEntry {
  std::string parameter;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::string graph;
  double loss = 0.0;
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  double tolerance = kGradCheckTolerance;
  bool passed = false;
};

/// Builds the forward graph on a fresh tape and returns a scalar.
using GraphBuilder = std::function<Var<double>(Tape<double>&)>;

struct GradCheckOptions {
  double step = kGradCheckStep;
  double tolerance = kGradCheckTolerance;
  /// 0 checks every element; otherwise a seeded sample of this many per parameter.
  std::size_t max_elements = 0;
  std::uint64_t seed = 0;
};

/// Compares reverse-mode gradients of `forward` with central finite differences.
/// Throws NumericalError naming the op if any forward value is non-finite.
GradCheckReport gradcheck(const std::string& graph, std::span<Parameter<double>* const> params,
                          const GraphBuilder& forward, const GradCheckOptions& options = {});

double grad_rel_error(double analytic, double numeric, double floor = kGradCheckFloor);

}  // namespace hfan

#include "hfan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hfan/rng.hpp"

namespace hfan {

double grad_rel_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const GraphBuilder& forward) {
  Tape<double> tape;
  tape.set_grad_enabled(false);
  tape.set_check_finite(true);
  const Var<double> loss = forward(tape);
  if (loss.value().numel() != 1) {
    throw ContractError("gradcheck: graph output must be scalar, got " + shape_str(loss.shape()));
  }
  return loss.value()[0];
}

}  // namespace

GradCheckReport gradcheck(const std::string& graph, std::span<Parameter<double>* const> params,
                          const GraphBuilder& forward, const GradCheckOptions& options) {
  for (Parameter<double>* p : params) p->zero_grad();
  double loss0 = 0.0;
  {
    Tape<double> tape;
    tape.set_check_finite(true);
    const Var<double> loss = forward(tape);
    loss0 = loss.value()[0];
    tape.backward(loss);
  }

  GradCheckReport report;
  report.graph = graph;
  report.loss = loss0;
  // Central differences resolve the loss to about eps * |loss| / step, so the floor
  // grows with the loss magnitude.
  const double floor = kGradCheckFloor * std::max(1.0, std::abs(loss0));
  report.tolerance = options.tolerance;
  Rng rng(derive_seed(options.seed, 0x6772616463686bULL));
  for (Parameter<double>* p : params) {
    GradCheckEntry entry;
    entry.parameter = p->name;
    const std::size_t n = p->value.numel();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.max_elements > 0 && n > options.max_elements) {
      for (std::size_t i = 0; i < options.max_elements; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
      idx.resize(options.max_elements);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      const double saved = p->value[i];
      p->value[i] = saved + options.step;
      const double up = evaluate(forward);
      p->value[i] = saved - options.step;
      const double down = evaluate(forward);
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = p->grad[i];
      const double err = grad_rel_error(analytic, numeric, floor);
      if (err > entry.max_rel_err || entry.checked == 0) {
        entry.max_rel_err = err;
        entry.worst_index = i;
        entry.analytic = analytic;
        entry.numeric = numeric;
      }
      ++entry.checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(entry);
  }
  report.passed = report.max_rel_err <= options.tolerance;
  return report;
}

}  // namespace hfan

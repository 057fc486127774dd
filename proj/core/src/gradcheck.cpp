#include "pssc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pssc/rng.hpp"

namespace pssc {
namespace {

double evaluate(const ScalarFn& fn, ParameterTable<double>& params) {
  Tape<double> tape;
  return fn(tape, params).value()[0];
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& fn, ParameterTable<double>& params, const GradCheckOptions& opts) {
  params.zero_grad();
  {
    Tape<double> tape;
    tape.backward(fn(tape, params));
  }
  GradCheckReport report;
  RngStream rng(opts.seed);
  for (auto& [name, p] : params) {
    const std::size_t n = p.value.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (opts.max_entries_per_param > 0 && n > opts.max_entries_per_param) {
      std::shuffle(idx.begin(), idx.end(), rng.engine());
      idx.resize(opts.max_entries_per_param);
    }
    const bool has_grad = p.grad.size() == n;
    for (std::size_t i : idx) {
      const double saved = p.value[i];
      p.value[i] = saved + opts.step;
      const double up = evaluate(fn, params);
      p.value[i] = saved - opts.step;
      const double down = evaluate(fn, params);
      p.value[i] = saved;
      const double numeric = (up - down) / (2 * opts.step);
      const double analytic = has_grad ? p.grad[i] : 0.0;
      const double abs_err = std::abs(analytic - numeric);
      const double rel = abs_err / std::max({std::abs(analytic), std::abs(numeric), opts.floor});
      ++report.num_checked;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = name;
        report.worst_index = i;
      }
    }
  }
  report.passed = report.max_rel_error <= opts.tolerance;
  return report;
}

}  // namespace pssc

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pssc/autograd.hpp"

namespace pssc {

struct GradCheckReport {
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t num_checked = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor so near-zero gradients are compared absolutely.
  double floor = 1e-4;
  /// Entries probed per parameter; 0 checks every entry.
  std::size_t max_entries_per_param = 0;
  std::uint64_t seed = 0;
};

/// Builds the scalar loss for the parameters bound on a fresh tape.
using ScalarFn = std::function<Var<double>(Tape<double>&, ParameterTable<double>&)>;

/// Compares the tape gradient of `fn` with central finite differences over
/// every (or a sampled subset of) parameter entries. Relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
GradCheckReport grad_check(const ScalarFn& fn, ParameterTable<double>& params, const GradCheckOptions& opts = {});

}  // namespace pssc

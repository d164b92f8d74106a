#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "clustertab/nn/tape.hpp"

namespace clustertab::nn {

struct GradCheckOptions {
  double epsilon = 1e-4;
  /// Smallest denominator of the relative error.
  double abs_floor = 1e-8;
  /// Entries sampled per parameter; half are drawn among entries with a
  /// non-zero analytic gradient, the rest uniformly.
  int samples_per_param = 6;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  int checked = 0;
};

/// Builds `graph` on fresh tapes to compare reverse-mode gradients with the
/// fourth-order central difference
/// (8(f(θ+ε) - f(θ-ε)) - (f(θ+2ε) - f(θ-2ε))) / 12ε. Relative error uses
/// the denominator max(|analytic|, |numeric|, abs_floor). `graph` must return a
/// scalar Var and be deterministic.
GradCheckResult numerical_gradient_check(const std::function<Var(Tape&)>& graph, ParamStore& params,
                                         const GradCheckOptions& options = {});

}  // namespace clustertab::nn

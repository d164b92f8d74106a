#include "clustertab/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace clustertab::nn {

GradCheckResult numerical_gradient_check(const std::function<Var(Tape&)>& graph, ParamStore& params,
                                         const GradCheckOptions& options) {
  params.zero_grad();
  {
    Tape tape(&params);
    Var out = graph(tape);
    tape.backward(out);
  }

  auto evaluate = [&]() {
    Tape tape(&params);
    return static_cast<double>(tape.value(graph(tape))[0]);
  };

  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  for (auto& p : params.all()) {
    const std::size_t n = p.value.size();
    if (n == 0) continue;
    std::vector<std::size_t> nonzero;
    for (std::size_t i = 0; i < n; ++i)
      if (p.grad[i] != 0) nonzero.push_back(i);

    std::vector<std::size_t> picks;
    const int half = options.samples_per_param / 2;
    for (int k = 0; k < half && !nonzero.empty(); ++k)
      picks.push_back(nonzero[std::uniform_int_distribution<std::size_t>(0, nonzero.size() - 1)(rng)]);
    while (static_cast<int>(picks.size()) < options.samples_per_param)
      picks.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));

    for (std::size_t idx : picks) {
      const Scalar saved = p.value[idx];
      auto at = [&](double offset) {
        p.value[idx] = static_cast<Scalar>(saved + offset);
        return evaluate();
      };
      const double h = options.epsilon;
      const double numeric = (8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h);
      p.value[idx] = saved;
      const double analytic = p.grad[idx];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error || result.worst_param.empty()) {
        if (rel >= result.max_rel_error) {
          result.max_rel_error = rel;
          result.worst_param = p.name;
          result.worst_index = idx;
          result.worst_analytic = analytic;
          result.worst_numeric = numeric;
        }
      }
    }
  }
  return result;
}

}  // namespace clustertab::nn

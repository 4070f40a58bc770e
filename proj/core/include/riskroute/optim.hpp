#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace riskroute {

/// Objective evaluated at `params`; writes the gradient into `grad` when it
/// is non-empty and returns the loss.
using Objective = std::function<double(std::span<const double> params, std::span<double> grad)>;

struct LineSearchOptions {
  int epochs = 200;
  double initial_step = 1.0;
  double max_step = 64.0;
  int max_halvings = 40;
  double armijo = 1e-4;
};

struct LineSearchTrace {
  /// Loss before the first epoch followed by the loss after each epoch.
  std::vector<double> losses;
  int accepted_steps = 0;
};

/// Full-batch gradient descent with backtracking. A step is only taken when
/// it satisfies the Armijo condition, so the recorded loss never increases.
inline LineSearchTrace minimize_with_line_search(std::vector<double>& params, const Objective& f,
                                                 const LineSearchOptions& opt) {
  LineSearchTrace trace;
  std::vector<double> grad(params.size()), candidate(params.size());
  double loss = f(params, grad);
  trace.losses.push_back(loss);
  double step = opt.initial_step;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    double gnorm2 = 0.0;
    for (double g : grad) gnorm2 += g * g;
    if (gnorm2 < 1e-30) {
      trace.losses.push_back(loss);
      continue;
    }
    bool accepted = false;
    for (int h = 0; h <= opt.max_halvings; ++h) {
      for (std::size_t i = 0; i < params.size(); ++i) candidate[i] = params[i] - step * grad[i];
      const double trial = f(candidate, {});
      if (std::isfinite(trial) && trial <= loss - opt.armijo * step * gnorm2) {
        params.swap(candidate);
        loss = f(params, grad);
        accepted = true;
        ++trace.accepted_steps;
        step = std::min(step * 2.0, opt.max_step);
        break;
      }
      step *= 0.5;
    }
    if (!accepted) step = opt.initial_step;
    trace.losses.push_back(loss);
  }
  return trace;
}

}  // namespace riskroute

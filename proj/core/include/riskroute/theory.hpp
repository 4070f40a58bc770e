#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "riskroute/config.hpp"
#include "riskroute/router.hpp"

namespace riskroute {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Planted 1-D model: f ~ U(0,1) in feature 0, y ~ Bernoulli(clip(f, 0.05, 0.95)).
/// Examples are dealt round-robin into `seeds` seed groups.
std::vector<RoutingExample> planted_examples(std::size_t n, int seeds, std::uint64_t key);

struct PlantedCalibration {
  RouterNet net;
  TemperatureFit temperature;
  double mean_abs_error = 0.0;
};

/// train_router + fit_temperature on the planted model; error is measured
/// on a uniform grid of f.
PlantedCalibration train_planted(std::size_t n, int seeds, std::uint64_t key);

struct TransferCheck {
  std::size_t pairs = 0;
  std::size_t violations = 0;
  double min_slack = INFINITY;
  double mean_jsd_reg = 0.0;
  double mean_jsd_plain = 0.0;
};

/// Distills with lambda_cons 0.2 and 0, then audits paired test views.
TransferCheck consistency_transfer(const RunConfig& cfg, int seeds_per_task);

struct GradientReport {
  double bc = 0.0;
  double dpo = 0.0;
  double consistency = 0.0;
  double router = 0.0;
};

/// Worst norm-wise relative error between analytic and central-difference
/// gradients over `points` random parameter vectors.
GradientReport gradient_errors(int points, std::uint64_t key);

CheckResult check_calibration_recovery(bool quick = false, PlantedCalibration* keep = nullptr);
CheckResult check_threshold_optimality();
CheckResult check_regret_bound(const RouterNet* trained = nullptr);
CheckResult check_tv_jsd();
CheckResult check_best_of_k(bool quick = false);
CheckResult check_noisy_dpo();
CheckResult check_consistency_transfer(bool quick = false);
CheckResult check_gradients();

/// All of the above, in order.
std::vector<CheckResult> run_theory_suite(bool quick = false);

}  // namespace riskroute

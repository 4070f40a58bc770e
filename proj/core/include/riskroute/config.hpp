#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "riskroute/distill.hpp"
#include "riskroute/domain.hpp"
#include "riskroute/eval.hpp"
#include "riskroute/features.hpp"
#include "riskroute/policy.hpp"
#include "riskroute/records.hpp"
#include "riskroute/router.hpp"
#include "riskroute/verifier.hpp"

namespace riskroute {

struct PolicyBlock {
  double teacher_error_rate = 0.02;
  int teacher_seeds_per_task = 4;
  int bc_epochs = 300;
  double bc_learning_rate = 1.0;
  std::uint64_t seed = 11;
};

struct RouterBlock {
  TrainSpec train;
  ThresholdMode threshold_mode = ThresholdMode::Bayes;
  int routing_seeds_per_task = 20;
};

struct RuntimeBlock {
  int k = 5;
  std::optional<int> budget;
  std::uint64_t seed = 31;
};

struct EvalBlock {
  int seeds_per_task = 50;
  int bootstrap_resamples = kBootstrapResamples;
  double ci_level = 0.95;
  std::uint64_t bootstrap_seed = 2024;
  std::vector<double> lambda_cons_grid = {0.0, 0.05, 0.1, 0.2, 0.5};
  std::vector<std::pair<double, double>> cvar_grid = {{0.05, 0.02}, {0.05, 0.10}, {0.10, 0.05}, {0.10, 0.10},
                                                      {0.20, 0.05}, {0.20, 0.10}, {0.20, 0.15}, {0.30, 0.10}};
};

/// Environment used when a run config does not say otherwise: every
/// perturbation family on at intensity 0.1.
inline EnvConfig default_run_env() {
  EnvConfig e;
  e.family_intensities = {0.1, 0.1, 0.1, 0.1};
  return e;
}

/// Full run configuration: one block per module plus the task split.
struct RunConfig {
  EnvConfig env = default_run_env();
  std::array<double, 3> split_fractions = {0.70, 0.15, 0.15};
  std::uint64_t split_seed = 42;
  PolicyBlock policy;
  VerifierSpec verifier;
  std::string verifier_regime;
  DistillConfig distill;
  std::uint64_t distill_seed = 17;
  FeatureMask mask = FeatureMask::Full;
  RouterBlock router;
  RuntimeBlock runtime;
  EvalBlock eval;

  void validate() const;
};

/// Missing keys keep their defaults; unknown keys and bad values raise
/// ConfigError.
RunConfig config_from_json(const json& j);
json config_to_json(const RunConfig& c);

/// Applies RISKROUTE__<block>__<key>[__<key>...]=<value> overrides from the
/// process environment. Values are parsed as JSON, falling back to a string.
void apply_env_overrides(json& j, const std::vector<std::pair<std::string, std::string>>& env);
std::vector<std::pair<std::string, std::string>> process_env_overrides();

/// Reads a config file (or defaults when `path` is empty) and applies
/// environment overrides.
RunConfig load_config(const std::filesystem::path& path);

/// Hex FNV-1a of the canonical JSON dump.
std::string config_hash(const RunConfig& c);

}  // namespace riskroute

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace riskroute {

using ActionId = int;
using Token = int;
using TokenSeq = std::vector<Token>;
using TaskId = std::uint32_t;

enum class Family : std::uint8_t { ToolFlaky = 0, PartialObs = 1, Injection = 2, Distractor = 3 };
inline constexpr std::array<Family, 4> kAllFamilies = {Family::ToolFlaky, Family::PartialObs,
                                                       Family::Injection, Family::Distractor};

std::string_view to_string(Family f);
Family family_from_string(std::string_view name);

enum class Executor : std::uint8_t { Slm = 0, Llm = 1 };

/// Raised when a configuration value violates its documented range.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Simulator configuration: state/action spaces, horizon, vocabulary and the
/// perturbation channel. The discount is housed for completeness; no
/// objective in this library consumes it.
struct EnvConfig {
  int state_count = 12;
  int action_count = 6;
  int horizon = 20;
  int goal_vocab_size = 64;
  int task_count = 100;
  int max_subgoals = 2;
  /// Minimum number of spare steps between the optimal plan length and H.
  int min_slack = 4;
  double hazard_density = 0.3;
  double reward_success = 1.0;
  double discount = 1.0;
  std::array<bool, 4> families_enabled = {true, true, true, true};
  std::array<double, 4> family_intensities = {0.0, 0.0, 0.0, 0.0};
  std::uint64_t rng_seed = 7;

  /// Effective intensity; zero for disabled families.
  double intensity(Family f) const {
    const auto i = static_cast<std::size_t>(f);
    return families_enabled[i] ? family_intensities[i] : 0.0;
  }

  /// Copy of this config with every intensity set to zero.
  EnvConfig clean() const {
    EnvConfig c = *this;
    c.family_intensities = {0.0, 0.0, 0.0, 0.0};
    return c;
  }

  void validate() const;
};

/// Observable history x_t = (goal, o_0..o_t, a_0..a_{t-1}).
struct Context {
  TokenSeq goal;
  std::vector<TokenSeq> observations;
  std::vector<ActionId> actions;
  int step_index = 0;

  bool well_formed(int horizon) const {
    return observations.size() == static_cast<std::size_t>(step_index) + 1 &&
           actions.size() == static_cast<std::size_t>(step_index) && step_index >= 0 &&
           step_index < horizon;
  }

  const TokenSeq& last_observation() const { return observations.back(); }
  std::size_t token_count() const;

  friend bool operator==(const Context&, const Context&) = default;
};

/// Latent perturbation seed z. The per-step corruption plan is a pure
/// function of (z, EnvConfig); see env::corruption_plan.
struct PerturbationSeed {
  std::uint64_t z = 0;
  friend bool operator==(const PerturbationSeed&, const PerturbationSeed&) = default;
};

inline constexpr std::size_t kFeatureDim = 15;

/// The 15-slot risk feature vector consumed by the router.
struct RiskFeatures {
  std::array<double, kFeatureDim> values{};

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  bool finite() const;

  friend bool operator==(const RiskFeatures&, const RiskFeatures&) = default;
};

struct Candidate {
  ActionId action = 0;
  double log_prob = 0.0;
  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct StepRecord {
  Context context;
  std::vector<Candidate> candidates;
  std::vector<double> verifier_scores;
  ActionId chosen_action = 0;
  Executor executor = Executor::Slm;
  std::optional<RiskFeatures> features;
  std::optional<double> router_prob;
  /// LLM calls left after this step; absent for unbounded budgets.
  std::optional<int> budget_remaining;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct PerturbedEpisode {
  TaskId task_id = 0;
  PerturbationSeed seed;
  std::string source;
  std::vector<StepRecord> steps;
  bool success = false;
  int llm_calls = 0;
  /// nullopt means unbounded.
  std::optional<int> budget_limit;

  int recount_llm_calls() const;
  /// Throws std::logic_error describing the first violated invariant.
  void check_invariants() const;

  friend bool operator==(const PerturbedEpisode&, const PerturbedEpisode&) = default;
};

struct RoutingExample {
  RiskFeatures features;
  int label = 0;
  std::uint64_t seed_id = 0;
  int step_index = 0;
  friend bool operator==(const RoutingExample&, const RoutingExample&) = default;
};

/// Per-step costs of the routing surrogate. The canonical values keep the
/// 50:1 LLM/SLM ratio in units where seed-level risk lives in [0, 0.3].
struct CostSpec {
  double c_slm = 0.002;
  double c_llm = 0.1;
  double kappa = 0.196;

  void validate() const;
};

struct CVaRSpec {
  double alpha = 0.20;
  double epsilon = 0.10;
  double lambda_brier = 1.0;
  double lambda_init = 1.0;

  void validate() const;
};

struct DatasetSplit {
  std::vector<TaskId> train;
  std::vector<TaskId> valid;
  std::vector<TaskId> test;
  std::array<double, 3> fractions = {0.70, 0.15, 0.15};
  std::uint64_t seed = 42;

  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

/// Deterministic task-level partition. Ids are sorted before the seeded
/// shuffle, so the result does not depend on input order.
DatasetSplit derive_splits(std::vector<TaskId> task_ids, std::array<double, 3> fractions,
                           std::uint64_t seed);

}  // namespace riskroute

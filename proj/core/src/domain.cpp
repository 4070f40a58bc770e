#include "riskroute/domain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "riskroute/rng.hpp"

namespace riskroute {

std::string_view to_string(Family f) {
  switch (f) {
    case Family::ToolFlaky: return "tool_flaky";
    case Family::PartialObs: return "partial_obs";
    case Family::Injection: return "injection";
    case Family::Distractor: return "distractor";
  }
  return "unknown";
}

Family family_from_string(std::string_view name) {
  for (Family f : kAllFamilies)
    if (to_string(f) == name) return f;
  throw ConfigError("unknown perturbation family: " + std::string(name));
}

void EnvConfig::validate() const {
  if (state_count < 3) throw ConfigError("env.state_count must be >= 3");
  if (action_count < 4) throw ConfigError("env.action_count must be >= 4");
  if (horizon < 2) throw ConfigError("env.horizon must be >= 2");
  if (goal_vocab_size < 22 + state_count)
    throw ConfigError("env.goal_vocab_size too small for the token layout");
  if (task_count < 1) throw ConfigError("env.task_count must be positive");
  if (max_subgoals < 1 || max_subgoals > 4) throw ConfigError("env.max_subgoals must be in [1,4]");
  if (min_slack < 0) throw ConfigError("env.min_slack must be nonnegative");
  if (hazard_density < 0.0 || hazard_density > 0.8)
    throw ConfigError("env.hazard_density must be in [0,0.8]");
  if (!(discount > 0.0 && discount <= 1.0)) throw ConfigError("env.discount must be in (0,1]");
  for (double v : family_intensities)
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("env intensities must be in [0,1]");
}

std::size_t Context::token_count() const {
  std::size_t n = goal.size();
  for (const auto& o : observations) n += o.size();
  return n;
}

bool RiskFeatures::finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

int PerturbedEpisode::recount_llm_calls() const {
  return static_cast<int>(std::count_if(steps.begin(), steps.end(), [](const StepRecord& s) {
    return s.executor == Executor::Llm;
  }));
}

void PerturbedEpisode::check_invariants() const {
  if (llm_calls != recount_llm_calls())
    throw std::logic_error("episode llm_calls does not match LLM step count");
  if (budget_limit && llm_calls > *budget_limit)
    throw std::logic_error("episode exceeded its LLM budget");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const StepRecord& s = steps[i];
    if (s.context.step_index != static_cast<int>(i))
      throw std::logic_error("episode steps are not contiguous from t=0");
    if (s.candidates.size() != s.verifier_scores.size())
      throw std::logic_error("candidate and score lists differ in length");
    for (double v : s.verifier_scores)
      if (!(v >= 0.0 && v <= 1.0)) throw std::logic_error("verifier score outside [0,1]");
    if (s.router_prob && !(*s.router_prob >= 0.0 && *s.router_prob <= 1.0))
      throw std::logic_error("router probability outside [0,1]");
  }
}

void CostSpec::validate() const {
  if (!(c_slm > 0.0 && c_llm > 0.0 && kappa > 0.0))
    throw ConfigError("costs c_slm, c_llm and kappa must be strictly positive");
}

void CVaRSpec::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("cvar alpha must be in (0,1]");
  if (!(epsilon >= 0.0)) throw ConfigError("cvar epsilon must be nonnegative");
  if (lambda_brier < 0.0 || lambda_init < 0.0)
    throw ConfigError("cvar multipliers must be nonnegative");
}

DatasetSplit derive_splits(std::vector<TaskId> task_ids, std::array<double, 3> fractions,
                           std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  for (double f : fractions)
    if (f < 0.0) throw ConfigError("split fractions must be nonnegative");
  std::sort(task_ids.begin(), task_ids.end());
  task_ids.erase(std::unique(task_ids.begin(), task_ids.end()), task_ids.end());
  const std::size_t n = task_ids.size();
  if (n < 3) throw ConfigError("need at least 3 distinct tasks for a train/valid/test split");

  Rng rng(seed);
  shuffle(task_ids.begin(), task_ids.end(), rng);

  auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  auto n_valid = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 2);
  n_valid = std::clamp<std::size_t>(n_valid, 1, n - n_train - 1);

  DatasetSplit split;
  split.fractions = fractions;
  split.seed = seed;
  split.train.assign(task_ids.begin(), task_ids.begin() + n_train);
  split.valid.assign(task_ids.begin() + n_train, task_ids.begin() + n_train + n_valid);
  split.test.assign(task_ids.begin() + n_train + n_valid, task_ids.end());
  for (auto* part : {&split.train, &split.valid, &split.test}) std::sort(part->begin(), part->end());
  return split;
}

}  // namespace riskroute

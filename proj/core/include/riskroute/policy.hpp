#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "riskroute/domain.hpp"
#include "riskroute/env.hpp"
#include "riskroute/optim.hpp"
#include "riskroute/rng.hpp"

namespace riskroute {

enum class PolicyStage : std::uint8_t { Initial = 0, BehaviorCloned = 1, Distilled = 2 };
std::string_view to_string(PolicyStage s);

/// Hand-coded context features for the student policy: indicators of the
/// tokens in the latest observation, a carried-progress summary recovered
/// from visible count tokens, the step fraction and a last-action one-hot.
class PolicyFeatureMap {
 public:
  explicit PolicyFeatureMap(const EnvConfig& config);

  std::size_t dim() const { return dim_; }
  std::vector<double> operator()(const Context& x) const;

 private:
  int vocab_;
  int actions_;
  int horizon_;
  TokenLayout layout_;
  std::size_t dim_;
};

/// Linear-softmax student pi_theta(a|x) = softmax((W^T phi(x) + b) / T).
/// Parameters are stored flat: W row-major (feature, action), then b.
class SoftmaxPolicy {
 public:
  SoftmaxPolicy(const EnvConfig& config, double temperature = 1.0);

  std::size_t feature_dim() const { return features_.dim(); }
  int action_count() const { return actions_; }
  double temperature() const { return temperature_; }
  void set_temperature(double t);

  std::span<const double> params() const { return params_; }
  std::vector<double>& mutable_params() { return params_; }
  void set_params(std::vector<double> p);

  PolicyStage stage() const { return stage_; }
  void set_stage(PolicyStage s) { stage_ = s; }

  std::vector<double> features(const Context& x) const { return features_(x); }
  std::vector<double> logits(std::span<const double> phi) const;
  std::vector<double> logits_with(std::span<const double> params, std::span<const double> phi) const;
  std::vector<double> log_probs(const Context& x) const;
  std::vector<double> action_distribution(const Context& x) const;

  /// FNV-1a over the raw parameter bytes and temperature.
  std::uint64_t hash() const;

 private:
  PolicyFeatureMap features_;
  int actions_;
  double temperature_;
  std::vector<double> params_;
  PolicyStage stage_ = PolicyStage::Initial;
};

/// Log-softmax of a logit vector.
std::vector<double> log_softmax(std::span<const double> logits);

/// K i.i.d. draws with their log-probabilities under the policy.
std::vector<Candidate> sample_candidates(const SoftmaxPolicy& policy, const Context& x, int k, Rng& rng);

/// Bit-exact snapshot of a policy used as the preference-optimization
/// reference. The hash is recorded at construction.
class FrozenReference {
 public:
  explicit FrozenReference(const SoftmaxPolicy& policy) : policy_(policy), hash_(policy.hash()) {}
  const SoftmaxPolicy& policy() const { return policy_; }
  std::uint64_t recorded_hash() const { return hash_; }
  bool intact() const { return policy_.hash() == hash_; }

 private:
  const SoftmaxPolicy policy_;
  const std::uint64_t hash_;
};

/// Scripted planner with latent-state access. With probability error_rate it
/// takes a uniformly random non-optimal action.
class TeacherPolicy {
 public:
  TeacherPolicy(const Environment& env, double error_rate = 0.02);

  ActionId act(const LatentState& s, Rng& rng) const;
  std::vector<double> distribution(const LatentState& s) const;
  double error_rate() const { return error_rate_; }

 private:
  const Environment* env_;
  double error_rate_;
};

/// Seed for episode `index` of `task` in the stream named by `purpose`.
PerturbationSeed episode_seed(std::uint64_t purpose, TaskId task, std::uint64_t index);

namespace seed_purpose {
inline constexpr std::uint64_t kTeacherClean = 0xC1EA;
inline constexpr std::uint64_t kTeacherPerturbed = 0x9E27;
inline constexpr std::uint64_t kRouting = 0x7007;
inline constexpr std::uint64_t kEvaluation = 0xE7A1;
inline constexpr std::uint64_t kConsistency = 0xC0C0;
}  // namespace seed_purpose

/// Teacher rollouts: one clean episode per task (zero intensities) plus
/// `seeds_per_task` perturbed replays.
std::vector<PerturbedEpisode> collect_teacher_trajectories(const Environment& env,
                                                           const TeacherPolicy& teacher,
                                                           const std::vector<TaskId>& tasks,
                                                           int seeds_per_task, std::uint64_t seed);

struct BCExample {
  std::vector<double> phi;
  ActionId action = 0;
};

/// (x, a*) pairs from successful episodes only.
std::vector<BCExample> bc_dataset(const SoftmaxPolicy& shape, const std::vector<PerturbedEpisode>& pool);

/// Mean negative log-likelihood; fills grad when non-empty.
double bc_loss(const SoftmaxPolicy& shape, std::span<const double> params,
               const std::vector<BCExample>& data, std::span<double> grad);

struct BCOptions {
  int epochs = 300;
  double learning_rate = 1.0;
};

struct BCResult {
  SoftmaxPolicy policy;
  LineSearchTrace trace;
  std::size_t examples = 0;
};

BCResult train_bc(const EnvConfig& config, const std::vector<PerturbedEpisode>& pool, const BCOptions& opt);

void save_policy(const std::filesystem::path& path, const SoftmaxPolicy& policy,
                 const std::string& config_hash);
SoftmaxPolicy load_policy(const std::filesystem::path& path, const EnvConfig& config,
                          std::string* config_hash_out = nullptr);

}  // namespace riskroute

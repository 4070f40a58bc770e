#pragma once

// Synthetic "hazard chain" POMDP. The agent walks a line of cells, collects
// sub-goals in order and submits at a terminal cell. Collecting on a hazard
// cell or submitting early is unrecoverable. Observations are short token
// sequences passed through a seed-driven corruption channel.

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "riskroute/domain.hpp"

namespace riskroute {

namespace action {
inline constexpr ActionId kLeft = 0;
inline constexpr ActionId kRight = 1;
inline constexpr ActionId kCollect = 2;
inline constexpr ActionId kSubmit = 3;
inline constexpr ActionId kWait = 4;
}  // namespace action

/// Token id layout. Ids 0-3 are the reserved corruption markers.
struct TokenLayout {
  static constexpr Token kMask = 0;
  static constexpr Token kError = 1;
  static constexpr Token kInject = 2;
  static constexpr Token kDistract = 3;

  int state_count = 0;

  explicit TokenLayout(int states = 12) : state_count(states) {}

  Token position(int p) const { return 4 + p; }
  Token base() const { return 4 + state_count; }
  Token cell_empty() const { return base(); }
  Token cell_subgoal() const { return base() + 1; }
  Token cell_hazard() const { return base() + 2; }
  Token cell_terminal() const { return base() + 3; }
  Token next_left() const { return base() + 4; }
  Token next_right() const { return base() + 5; }
  Token next_here() const { return base() + 6; }
  Token feedback_ok() const { return base() + 7; }
  Token feedback_invalid() const { return base() + 8; }
  Token feedback_collected() const { return base() + 9; }
  Token feedback_start() const { return base() + 10; }
  Token count(int k) const { return base() + 11 + k; }
  Token goal_mark() const { return base() + 16; }
  Token goal_end() const { return base() + 17; }
  int used() const { return base() + 18; }

  bool is_position(Token t) const { return t >= 4 && t < base(); }
  bool is_count(Token t) const { return t >= count(0) && t <= count(4); }
};

inline constexpr std::size_t kCleanObsLength = 5;
inline constexpr std::size_t kErrorBlockLength = 3;

struct Task {
  TaskId id = 0;
  int start = 0;
  std::vector<int> subgoals;
  int terminal = 0;
  std::vector<bool> hazard;
  TokenSeq goal;
  int optimal_length = 0;
};

namespace hazard_bit {
inline constexpr std::uint8_t kCollectOnHazard = 1;
inline constexpr std::uint8_t kPrematureSubmit = 2;
}  // namespace hazard_bit

struct LatentState {
  TaskId task_id = 0;
  int position = 0;
  /// Bit i set once sub-goal i has been collected (in order).
  std::uint8_t carried_flags = 0;
  std::uint8_t hazard_flags = 0;
  bool submitted = false;
  Token last_feedback = 0;

  int collected() const;
  friend bool operator==(const LatentState&, const LatentState&) = default;
};

struct PerturbationOp {
  Family family = Family::ToolFlaky;
  double intensity = 0.0;
};

/// Materialized per-step draws for one seed. Every value is a pure function
/// of (z, t, family, slot); regenerating the plan is bitwise stable.
struct StepPlan {
  std::array<double, 4> fire{};
  std::array<double, 8> mask{};
  std::array<double, 3> distractor{};
  friend bool operator==(const StepPlan&, const StepPlan&) = default;
};
std::vector<StepPlan> corruption_plan(const EnvConfig& config, PerturbationSeed seed);

/// Single-operator corruption of one observation.
TokenSeq apply_perturbation(const TokenSeq& clean, PerturbationOp op, PerturbationSeed seed, int t,
                            const TokenLayout& layout);

struct StepOutcome {
  LatentState state;
  TokenSeq observation;
  bool terminal = false;
  bool success = false;
};

class Environment {
 public:
  explicit Environment(EnvConfig config);

  const EnvConfig& config() const { return config_; }
  const TokenLayout& tokens() const { return tokens_; }
  const Task& task(TaskId id) const;
  std::vector<TaskId> task_ids() const;
  int max_goal_length() const { return config_.max_subgoals + 3; }

  std::pair<LatentState, Context> reset(TaskId task_id, PerturbationSeed seed) const;
  StepOutcome step(const LatentState& state, ActionId a, PerturbationSeed seed, int t) const;

  TokenSeq clean_observation(const LatentState& state) const;
  /// Applies every enabled family in enum order.
  TokenSeq observe(const LatentState& state, PerturbationSeed seed, int t) const;
  std::pair<TokenSeq, TokenSeq> paired_views(const LatentState& state, PerturbationSeed z,
                                             PerturbationSeed z_prime, int t) const;

  ActionId optimal_action(const LatentState& state) const;
  bool is_hazard_action(const LatentState& state, ActionId a) const;
  bool is_valid_action(ActionId a) const { return a >= 0 && a < config_.action_count; }

 private:
  Task generate_task(TaskId id) const;

  EnvConfig config_;
  TokenLayout tokens_;
  std::vector<Task> tasks_;
};

/// One latent state and the context observed at it.
struct ReplayStep {
  LatentState state;
  Context context;
};

/// Re-executes a fixed action sequence under seed z. Latent transitions do
/// not depend on z, so replays of the same actions under two seeds visit the
/// same latent states. Stops early at a terminal step.
std::vector<ReplayStep> replay(const Environment& env, TaskId task_id,
                               const std::vector<ActionId>& actions, PerturbationSeed seed);

}  // namespace riskroute

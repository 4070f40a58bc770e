#include "riskroute/env.hpp"

#include <algorithm>
#include <bit>
#include <cstdlib>
#include <stdexcept>

#include "riskroute/rng.hpp"

namespace riskroute {
namespace {

constexpr std::uint64_t kFireSlot = 0;
constexpr std::uint64_t kMaskSlot = 1;
constexpr std::uint64_t kDistractorSlot = 100;

double plan_draw(PerturbationSeed seed, int t, Family f, std::uint64_t slot) {
  return keyed_uniform({seed.z, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(f), slot});
}

int plan_length(const Task& task) {
  int len = 0;
  int pos = task.start;
  for (int g : task.subgoals) {
    len += std::abs(g - pos) + 1;
    pos = g;
  }
  return len + std::abs(task.terminal - pos) + 1;
}

}  // namespace

int LatentState::collected() const { return std::popcount(carried_flags); }

std::vector<StepPlan> corruption_plan(const EnvConfig& config, PerturbationSeed seed) {
  std::vector<StepPlan> plan(static_cast<std::size_t>(config.horizon));
  for (int t = 0; t < config.horizon; ++t) {
    StepPlan& p = plan[static_cast<std::size_t>(t)];
    for (Family f : kAllFamilies) p.fire[static_cast<std::size_t>(f)] = plan_draw(seed, t, f, kFireSlot);
    for (std::size_t i = 0; i < p.mask.size(); ++i)
      p.mask[i] = plan_draw(seed, t, Family::PartialObs, kMaskSlot + i);
    for (std::size_t i = 0; i < p.distractor.size(); ++i)
      p.distractor[i] = plan_draw(seed, t, Family::Distractor, kDistractorSlot + i);
  }
  return plan;
}

TokenSeq apply_perturbation(const TokenSeq& clean, PerturbationOp op, PerturbationSeed seed, int t,
                            const TokenLayout& layout) {
  if (!(op.intensity >= 0.0 && op.intensity <= 1.0))
    throw std::invalid_argument("perturbation intensity must be in [0,1]");
  if (op.intensity == 0.0) return clean;
  const double fire = plan_draw(seed, t, op.family, kFireSlot);
  switch (op.family) {
    case Family::ToolFlaky:
      if (fire < op.intensity) return TokenSeq(kErrorBlockLength, TokenLayout::kError);
      return clean;
    case Family::PartialObs: {
      TokenSeq out = clean;
      for (std::size_t i = 0; i < out.size(); ++i)
        if (plan_draw(seed, t, Family::PartialObs, kMaskSlot + i) < op.intensity)
          out[i] = TokenLayout::kMask;
      return out;
    }
    case Family::Injection: {
      if (fire >= op.intensity) return clean;
      // Adversarial directive: a fake "collect here" cue.
      TokenSeq out = clean;
      out.insert(out.end(), {TokenLayout::kInject, layout.next_here(), layout.cell_subgoal()});
      return out;
    }
    case Family::Distractor: {
      if (fire >= op.intensity) return clean;
      auto pick = [&](std::uint64_t slot, int n) {
        return static_cast<int>(plan_draw(seed, t, Family::Distractor, kDistractorSlot + slot) * n);
      };
      TokenSeq out = clean;
      out.push_back(TokenLayout::kDistract);
      out.push_back(layout.next_left() + pick(0, 3));
      out.push_back(layout.cell_empty() + pick(1, 4));
      out.push_back(layout.position(pick(2, layout.state_count)));
      return out;
    }
  }
  return clean;
}

Environment::Environment(EnvConfig config) : config_(std::move(config)), tokens_(config_.state_count) {
  config_.validate();
  if (tokens_.used() > config_.goal_vocab_size)
    throw ConfigError("env.goal_vocab_size too small for the token layout");
  tasks_.reserve(static_cast<std::size_t>(config_.task_count));
  for (int i = 0; i < config_.task_count; ++i) tasks_.push_back(generate_task(static_cast<TaskId>(i)));
}

Task Environment::generate_task(TaskId id) const {
  Rng rng = Rng::keyed({config_.rng_seed, 0x7A5CULL, id});
  const int n = config_.state_count;
  const int budget = config_.horizon - config_.min_slack;
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Task task;
    task.id = id;
    const int m = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(config_.max_subgoals)));
    std::vector<int> cells(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) cells[static_cast<std::size_t>(i)] = i;
    shuffle(cells.begin(), cells.end(), rng);
    task.subgoals.assign(cells.begin(), cells.begin() + m);
    task.terminal = cells[static_cast<std::size_t>(m)];
    task.start = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
    task.hazard.assign(static_cast<std::size_t>(n), false);
    for (int c = 0; c < n; ++c) {
      const bool reserved = c == task.terminal ||
                            std::find(task.subgoals.begin(), task.subgoals.end(), c) != task.subgoals.end();
      const bool h = rng.bernoulli(config_.hazard_density);
      task.hazard[static_cast<std::size_t>(c)] = h && !reserved;
    }
    task.optimal_length = plan_length(task);
    if (task.optimal_length > budget) continue;
    task.goal.push_back(tokens_.goal_mark());
    for (int g : task.subgoals) task.goal.push_back(tokens_.position(g));
    task.goal.push_back(tokens_.position(task.terminal));
    task.goal.push_back(tokens_.goal_end());
    return task;
  }
  throw ConfigError("could not generate a solvable task; increase horizon or lower min_slack");
}

const Task& Environment::task(TaskId id) const {
  if (id >= tasks_.size()) throw std::out_of_range("unknown task id " + std::to_string(id));
  return tasks_[id];
}

std::vector<TaskId> Environment::task_ids() const {
  std::vector<TaskId> ids(tasks_.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<TaskId>(i);
  return ids;
}

TokenSeq Environment::clean_observation(const LatentState& s) const {
  const Task& task = this->task(s.task_id);
  const int k = s.collected();
  const bool collecting = k < static_cast<int>(task.subgoals.size());
  const int target = collecting ? task.subgoals[static_cast<std::size_t>(k)] : task.terminal;

  Token cell = tokens_.cell_empty();
  const auto p = static_cast<std::size_t>(s.position);
  if (s.position == task.terminal) {
    cell = tokens_.cell_terminal();
  } else if (task.hazard[p]) {
    cell = tokens_.cell_hazard();
  } else {
    for (std::size_t i = static_cast<std::size_t>(k); i < task.subgoals.size(); ++i)
      if (task.subgoals[i] == s.position) cell = tokens_.cell_subgoal();
  }
  const Token dir = s.position < target   ? tokens_.next_right()
                    : s.position > target ? tokens_.next_left()
                                          : tokens_.next_here();
  return {tokens_.position(s.position), cell, dir, tokens_.count(k), s.last_feedback};
}

TokenSeq Environment::observe(const LatentState& state, PerturbationSeed seed, int t) const {
  TokenSeq obs = clean_observation(state);
  for (Family f : kAllFamilies) {
    const double intensity = config_.intensity(f);
    if (intensity > 0.0) obs = apply_perturbation(obs, {f, intensity}, seed, t, tokens_);
  }
  return obs;
}

std::pair<LatentState, Context> Environment::reset(TaskId task_id, PerturbationSeed seed) const {
  const Task& task = this->task(task_id);
  LatentState s;
  s.task_id = task_id;
  s.position = task.start;
  s.last_feedback = tokens_.feedback_start();
  Context ctx;
  ctx.goal = task.goal;
  ctx.observations.push_back(observe(s, seed, 0));
  ctx.step_index = 0;
  return {s, ctx};
}

StepOutcome Environment::step(const LatentState& state, ActionId a, PerturbationSeed seed, int t) const {
  if (t < 0 || t >= config_.horizon) throw std::out_of_range("step index outside the horizon");
  const Task& task = this->task(state.task_id);
  StepOutcome out;
  LatentState s = state;
  const bool dead = s.hazard_flags != 0 || s.submitted;
  const int n = config_.state_count;
  const auto num_subgoals = static_cast<int>(task.subgoals.size());

  if (!dead) {
    switch (a) {
      case action::kLeft:
        if (s.position > 0) {
          --s.position;
          s.last_feedback = tokens_.feedback_ok();
        } else {
          s.last_feedback = tokens_.feedback_invalid();
        }
        break;
      case action::kRight:
        if (s.position < n - 1) {
          ++s.position;
          s.last_feedback = tokens_.feedback_ok();
        } else {
          s.last_feedback = tokens_.feedback_invalid();
        }
        break;
      case action::kCollect: {
        const int k = s.collected();
        if (k < num_subgoals && task.subgoals[static_cast<std::size_t>(k)] == s.position) {
          s.carried_flags = static_cast<std::uint8_t>(s.carried_flags | (1u << k));
          s.last_feedback = tokens_.feedback_collected();
        } else if (task.hazard[static_cast<std::size_t>(s.position)]) {
          s.hazard_flags |= hazard_bit::kCollectOnHazard;
          s.last_feedback = tokens_.feedback_invalid();
        } else {
          s.last_feedback = tokens_.feedback_invalid();
        }
        break;
      }
      case action::kSubmit:
        if (s.position == task.terminal && s.collected() == num_subgoals) {
          s.submitted = true;
          s.last_feedback = tokens_.feedback_ok();
        } else {
          s.hazard_flags |= hazard_bit::kPrematureSubmit;
          s.last_feedback = tokens_.feedback_invalid();
        }
        break;
      case action::kWait:
        s.last_feedback = tokens_.feedback_ok();
        break;
      default:
        // Unknown commands are rejected by the environment, not fatal.
        s.last_feedback = tokens_.feedback_invalid();
        break;
    }
  }
  out.success = s.submitted && s.hazard_flags == 0;
  out.terminal = out.success || s.hazard_flags != 0 || t + 1 >= config_.horizon;
  out.state = s;
  if (t + 1 < config_.horizon) out.observation = observe(s, seed, t + 1);
  return out;
}

std::pair<TokenSeq, TokenSeq> Environment::paired_views(const LatentState& state, PerturbationSeed z,
                                                        PerturbationSeed z_prime, int t) const {
  return {observe(state, z, t), observe(state, z_prime, t)};
}

ActionId Environment::optimal_action(const LatentState& s) const {
  const Task& task = this->task(s.task_id);
  const int k = s.collected();
  const bool collecting = k < static_cast<int>(task.subgoals.size());
  const int target = collecting ? task.subgoals[static_cast<std::size_t>(k)] : task.terminal;
  if (s.position < target) return action::kRight;
  if (s.position > target) return action::kLeft;
  return collecting ? action::kCollect : action::kSubmit;
}

bool Environment::is_hazard_action(const LatentState& s, ActionId a) const {
  const Task& task = this->task(s.task_id);
  if (a == action::kSubmit)
    return !(s.position == task.terminal && s.collected() == static_cast<int>(task.subgoals.size()));
  if (a == action::kCollect) {
    const int k = s.collected();
    const bool on_next = k < static_cast<int>(task.subgoals.size()) &&
                         task.subgoals[static_cast<std::size_t>(k)] == s.position;
    return !on_next && task.hazard[static_cast<std::size_t>(s.position)];
  }
  return false;
}

std::vector<ReplayStep> replay(const Environment& env, TaskId task_id,
                               const std::vector<ActionId>& actions, PerturbationSeed seed) {
  std::vector<ReplayStep> out;
  auto [state, ctx] = env.reset(task_id, seed);
  for (std::size_t t = 0; t < actions.size() && static_cast<int>(t) < env.config().horizon; ++t) {
    out.push_back({state, ctx});
    StepOutcome o = env.step(state, actions[t], seed, static_cast<int>(t));
    if (o.terminal) break;
    state = o.state;
    ctx.actions.push_back(actions[t]);
    ctx.observations.push_back(std::move(o.observation));
    ctx.step_index += 1;
  }
  return out;
}

}  // namespace riskroute

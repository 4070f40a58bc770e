#include "riskroute/runtime.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>

namespace riskroute {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::SlmOnly: return "slm_only";
    case Variant::LlmOnly: return "llm_only";
    case Variant::Entropy: return "entropy";
    case Variant::Heuristic: return "heuristic";
    case Variant::RiskRouter: return "risk_router";
    case Variant::Oracle: return "oracle";
  }
  return "unknown";
}

Variant variant_from_string(std::string_view name) {
  for (Variant v : kAllVariants)
    if (to_string(v) == name) return v;
  throw ConfigError("unknown routing variant: " + std::string(name));
}

bool HindsightTable::slm_success(TaskId task, PerturbationSeed z) const {
  const auto it = outcome_.find({task, z.z});
  if (it == outcome_.end())
    throw std::out_of_range("no SLM-only outcome for task " + std::to_string(task) + " seed " + std::to_string(z.z));
  return it->second;
}

HindsightTable build_hindsight_table(const std::vector<PerturbedEpisode>& slm_only) {
  HindsightTable t;
  for (const auto& ep : slm_only) {
    if (ep.source != to_string(Variant::SlmOnly) || ep.llm_calls != 0)
      throw std::invalid_argument("hindsight table requires SLM-only rollouts");
    t.outcome_[{ep.task_id, ep.seed.z}] = ep.success;
  }
  return t;
}

bool entropy_decision(const RiskFeatures& f, double tau_h) { return f[slot::kPolicyEntropy] >= tau_h; }

bool heuristic_decision(std::span<const double> scores, double theta_v) {
  if (scores.empty()) throw std::invalid_argument("heuristic rule needs at least one score");
  return *std::max_element(scores.begin(), scores.end()) < theta_v;
}

bool oracle_decision(TaskId task, PerturbationSeed z, const HindsightTable& hindsight) {
  return !hindsight.slm_success(task, z);
}

namespace {
constexpr std::uint64_t kSampleKey = 0x5A3D;
constexpr std::uint64_t kScoreKey = 0x5C0E;
constexpr std::uint64_t kTeacherKey = 0x7EAC;
}  // namespace

PerturbedEpisode run_episode(const Agent& agent, TaskId task, PerturbationSeed z, const RoutingPolicy& routing) {
  const Environment& env = *agent.env;
  if (routing.budget && *routing.budget < 0) throw std::invalid_argument("budget must be nonnegative");
  if (routing.variant == Variant::RiskRouter && routing.net == nullptr)
    throw std::invalid_argument("risk router variant needs a network");
  if (routing.variant == Variant::Oracle && routing.hindsight == nullptr)
    throw std::invalid_argument("oracle variant needs a hindsight table");

  PerturbedEpisode ep;
  ep.task_id = task;
  ep.seed = z;
  ep.source = std::string(to_string(routing.variant));
  ep.budget_limit = routing.budget;
  int remaining = routing.budget.value_or(std::numeric_limits<int>::max());
  const bool oracle_escalates =
      routing.variant == Variant::Oracle && oracle_decision(task, z, *routing.hindsight);

  auto [state, ctx] = env.reset(task, z);
  for (int t = 0; t < env.config().horizon; ++t) {
    const auto ut = static_cast<std::uint64_t>(t);
    StepRecord rec;
    rec.context = ctx;
    Rng sample_rng = Rng::keyed({agent.seed, task, z.z, ut, kSampleKey});
    rec.candidates = sample_candidates(*agent.slm, ctx, agent.k, sample_rng);
    Rng score_rng = Rng::keyed({agent.seed, task, z.z, ut, kScoreKey});
    rec.verifier_scores = agent.verifier->score_all(state, rec.candidates, score_rng);
    const BestOfK best = best_of_k(rec.candidates, rec.verifier_scores);
    const RiskFeatures f = extract_features(ctx, *agent.slm, rec.candidates, rec.verifier_scores, agent.limits);
    rec.features = f;

    bool decision = false;
    switch (routing.variant) {
      case Variant::SlmOnly: break;
      case Variant::LlmOnly: decision = true; break;
      case Variant::Entropy:
        decision = entropy_decision(f, routing.threshold);
        rec.router_prob = f[slot::kPolicyEntropy];
        break;
      case Variant::Heuristic: decision = heuristic_decision(rec.verifier_scores, routing.threshold); break;
      case Variant::RiskRouter: {
        const double p = routing.net->predict(apply_mask(f, routing.mask));
        rec.router_prob = p;
        decision = escalate(p, routing.threshold);
        break;
      }
      case Variant::Oracle: decision = oracle_escalates; break;
    }

    if (decision && remaining > 0) {
      Rng teacher_rng = Rng::keyed({agent.seed, task, z.z, ut, kTeacherKey});
      rec.chosen_action = agent.teacher->act(state, teacher_rng);
      rec.executor = Executor::Llm;
      --remaining;
      ++ep.llm_calls;
    } else {
      rec.chosen_action = best.action;
      rec.executor = Executor::Slm;
    }
    if (routing.budget) rec.budget_remaining = remaining;
    ep.steps.push_back(std::move(rec));

    StepOutcome o = env.step(state, ep.steps.back().chosen_action, z, t);
    if (o.terminal) {
      ep.success = o.success;
      break;
    }
    state = o.state;
    ctx.actions.push_back(ep.steps.back().chosen_action);
    ctx.observations.push_back(std::move(o.observation));
    ctx.step_index += 1;
  }
  return ep;
}

std::vector<EpisodeJob> make_jobs(const std::vector<TaskId>& tasks, int seeds_per_task, std::uint64_t purpose) {
  std::vector<EpisodeJob> jobs;
  for (TaskId task : tasks)
    for (int i = 0; i < seeds_per_task; ++i)
      jobs.push_back({task, episode_seed(purpose, task, static_cast<std::uint64_t>(i))});
  return jobs;
}

std::vector<PerturbedEpisode> run_episodes(const Agent& agent, const std::vector<EpisodeJob>& jobs,
                                           const RoutingPolicy& routing, int workers) {
  std::vector<PerturbedEpisode> out(jobs.size());
  const auto n = static_cast<std::size_t>(std::max(1, workers));
  if (n == 1 || jobs.size() < 2) {
    for (std::size_t i = 0; i < jobs.size(); ++i) out[i] = run_episode(agent, jobs[i].task, jobs[i].z, routing);
    return out;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < n; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < jobs.size(); i += n) out[i] = run_episode(agent, jobs[i].task, jobs[i].z, routing);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::uint64_t seed_id(TaskId task, PerturbationSeed z) { return hash_keys({0x5EED1DULL, task, z.z}); }

std::vector<RoutingExample> routing_examples(const std::vector<PerturbedEpisode>& slm_only) {
  std::vector<RoutingExample> out;
  for (const auto& ep : slm_only) {
    const std::uint64_t id = seed_id(ep.task_id, ep.seed);
    for (const auto& s : ep.steps) {
      if (!s.features) throw std::invalid_argument("routing examples need per-step features");
      out.push_back({*s.features, ep.success ? 0 : 1, id, s.context.step_index});
    }
  }
  return out;
}

RoutingCollection collect_routing_dataset(const Agent& agent, const std::vector<EpisodeJob>& jobs, int workers) {
  if (agent.slm->stage() != PolicyStage::Distilled)
    throw std::invalid_argument("routing data must come from the distilled policy");
  RoutingCollection c;
  c.episodes = run_episodes(agent, jobs, RoutingPolicy::slm_only(), workers);
  c.examples = routing_examples(c.episodes);
  return c;
}

}  // namespace riskroute

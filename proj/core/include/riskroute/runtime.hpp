#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "riskroute/domain.hpp"
#include "riskroute/env.hpp"
#include "riskroute/features.hpp"
#include "riskroute/policy.hpp"
#include "riskroute/router.hpp"
#include "riskroute/verifier.hpp"

namespace riskroute {

enum class Variant : std::uint8_t { SlmOnly, LlmOnly, Entropy, Heuristic, RiskRouter, Oracle };
inline constexpr std::array<Variant, 6> kAllVariants = {Variant::SlmOnly,   Variant::LlmOnly,    Variant::Entropy,
                                                        Variant::Heuristic, Variant::RiskRouter, Variant::Oracle};
std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view name);

/// Outcome of SLM-only rollouts keyed by (task, seed). Only buildable from
/// SLM-only episodes, so no online loop can produce one for itself.
class HindsightTable {
 public:
  bool slm_success(TaskId task, PerturbationSeed z) const;
  std::size_t size() const { return outcome_.size(); }

 private:
  HindsightTable() = default;
  std::map<std::pair<TaskId, std::uint64_t>, bool> outcome_;
  friend HindsightTable build_hindsight_table(const std::vector<PerturbedEpisode>& slm_only);
};

/// Throws unless every episode is an SLM-only rollout without teacher calls.
HindsightTable build_hindsight_table(const std::vector<PerturbedEpisode>& slm_only);

struct RoutingPolicy {
  Variant variant = Variant::SlmOnly;
  /// tau_H, theta_v or tau_route depending on the variant.
  double threshold = 0.5;
  const RouterNet* net = nullptr;
  FeatureMask mask = FeatureMask::Full;
  const HindsightTable* hindsight = nullptr;
  /// Per-episode LLM call cap; nullopt is unbounded.
  std::optional<int> budget;

  static RoutingPolicy slm_only() { return {}; }
  static RoutingPolicy llm_only() { return with(Variant::LlmOnly, 0.0); }
  static RoutingPolicy entropy(double tau_h) { return with(Variant::Entropy, tau_h); }
  static RoutingPolicy heuristic(double theta_v) { return with(Variant::Heuristic, theta_v); }
  static RoutingPolicy risk_router(const RouterNet& net, double tau, FeatureMask mask = FeatureMask::Full) {
    RoutingPolicy r = with(Variant::RiskRouter, tau);
    r.net = &net;
    r.mask = mask;
    return r;
  }
  static RoutingPolicy oracle(const HindsightTable& table) {
    RoutingPolicy r = with(Variant::Oracle, 0.0);
    r.hindsight = &table;
    return r;
  }

 private:
  static RoutingPolicy with(Variant v, double threshold) {
    RoutingPolicy r;
    r.variant = v;
    r.threshold = threshold;
    return r;
  }
};

/// Everything the inference loop needs besides the routing policy.
struct Agent {
  const Environment* env = nullptr;
  const SoftmaxPolicy* slm = nullptr;
  const TeacherPolicy* teacher = nullptr;
  const Verifier* verifier = nullptr;
  FeatureLimits limits;
  int k = 5;
  std::uint64_t seed = 0;
};

bool entropy_decision(const RiskFeatures& f, double tau_h);
bool heuristic_decision(std::span<const double> scores, double theta_v);
bool oracle_decision(TaskId task, PerturbationSeed z, const HindsightTable& hindsight);

/// Budget-gated inference loop. Candidate sampling, verifier jitter and
/// teacher draws are keyed by (task, z, t), so two variants that reach the
/// same context see the same candidates.
PerturbedEpisode run_episode(const Agent& agent, TaskId task, PerturbationSeed z, const RoutingPolicy& routing);

struct EpisodeJob {
  TaskId task = 0;
  PerturbationSeed z;
};

/// `seeds_per_task` evaluation seeds per task from the stream `purpose`.
std::vector<EpisodeJob> make_jobs(const std::vector<TaskId>& tasks, int seeds_per_task, std::uint64_t purpose);

/// Runs jobs across `workers` threads; results are in job order.
std::vector<PerturbedEpisode> run_episodes(const Agent& agent, const std::vector<EpisodeJob>& jobs,
                                           const RoutingPolicy& routing, int workers = 1);

/// Unique per (task, z) episode.
std::uint64_t seed_id(TaskId task, PerturbationSeed z);

/// y_t = 1[episode failed] for every step of every episode.
std::vector<RoutingExample> routing_examples(const std::vector<PerturbedEpisode>& slm_only);

struct RoutingCollection {
  std::vector<PerturbedEpisode> episodes;
  std::vector<RoutingExample> examples;
};

/// SLM-only rollouts of the distilled policy and their routing labels.
RoutingCollection collect_routing_dataset(const Agent& agent, const std::vector<EpisodeJob>& jobs, int workers = 1);

}  // namespace riskroute

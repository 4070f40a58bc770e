#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "riskroute/config.hpp"
#include "riskroute/distill.hpp"
#include "riskroute/env.hpp"
#include "riskroute/eval.hpp"
#include "riskroute/policy.hpp"
#include "riskroute/router.hpp"
#include "riskroute/runtime.hpp"

namespace riskroute {

/// Raised when a stage runs before its predecessors' artifacts exist.
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace stage {
inline constexpr const char* kTasks = "gen-tasks";
inline constexpr const char* kCollect = "collect";
inline constexpr const char* kTrainBc = "train-bc";
inline constexpr const char* kBuildPairs = "build-pairs";
inline constexpr const char* kDistill = "distill";
inline constexpr const char* kCollectRouting = "collect-routing";
inline constexpr const char* kTrainRouter = "train-router";
inline constexpr const char* kRollout = "rollout";
inline constexpr const char* kEvaluate = "evaluate";
inline constexpr const char* kAblate = "ablate";
}  // namespace stage

/// Artifact locations inside a run directory.
struct Artifacts {
  std::filesystem::path dir;

  explicit Artifacts(std::filesystem::path d) : dir(std::move(d)) {}
  std::filesystem::path tasks() const { return dir / "tasks.json"; }
  std::filesystem::path split() const { return dir / "split.json"; }
  std::filesystem::path teacher() const { return dir / "episodes.rljson"; }
  std::filesystem::path policy_bc() const { return dir / "policy_bc.bin"; }
  std::filesystem::path pairs() const { return dir / "pairs.rljson"; }
  std::filesystem::path policy_distilled() const { return dir / "policy_distilled.bin"; }
  std::filesystem::path distill_report() const { return dir / "distill_report.json"; }
  std::filesystem::path routing() const { return dir / "routing.rljson"; }
  std::filesystem::path routing_valid() const { return dir / "routing_valid.rljson"; }
  std::filesystem::path router() const { return dir / "router.bin"; }
  std::filesystem::path router_report() const { return dir / "router_report.csv"; }
  std::filesystem::path thresholds() const { return dir / "thresholds.json"; }
  std::filesystem::path metrics() const { return dir / "metrics.csv"; }
  std::filesystem::path summary() const { return dir / "summary.json"; }
  std::filesystem::path pareto() const { return dir / "pareto.csv"; }
};

struct World {
  Environment env;
  DatasetSplit split;
  Verifier verifier;
  TeacherPolicy teacher;

  explicit World(const RunConfig& cfg);
  World(const World&) = delete;
  World& operator=(const World&) = delete;
};

std::vector<PerturbedEpisode> collect_stage(const RunConfig& cfg, const World& w);
BCResult train_bc_stage(const RunConfig& cfg, const std::vector<PerturbedEpisode>& pool);
PreferenceBuildResult build_pairs_stage(const RunConfig& cfg, const World& w, const SoftmaxPolicy& bc,
                                        const std::vector<PerturbedEpisode>& pool);
DistillResult distill_stage(const RunConfig& cfg, const SoftmaxPolicy& bc, const std::vector<PreferencePair>& pairs,
                            const std::vector<ConsistencyPair>& consistency);

Agent make_agent(const RunConfig& cfg, const World& w, const SoftmaxPolicy& slm);

struct RoutingData {
  RoutingCollection train;
  RoutingCollection valid;
};
RoutingData collect_routing_stage(const RunConfig& cfg, const World& w, const SoftmaxPolicy& distilled,
                                  int workers);

/// Router plus the validation-calibrated thresholds of every variant.
struct RouterBundle {
  RouterModel model;
  std::vector<EpochReport> report;
  TemperatureFit temperature;
  double tau_entropy = 0.5;
  double theta_verifier = 0.5;
};

RouterBundle train_router_stage(const RunConfig& cfg, const std::vector<RoutingExample>& train,
                                const std::vector<RoutingExample>& valid);

/// Test-split jobs used by evaluate and ablate.
std::vector<EpisodeJob> evaluation_jobs(const RunConfig& cfg, const World& w);

struct Evaluation {
  std::vector<SweepRow> rows;
  json summary;
};

/// Runs all six variants on the test jobs.
Evaluation evaluate_stage(const RunConfig& cfg, const World& w, const SoftmaxPolicy& distilled,
                          const RouterBundle& router, const std::vector<RoutingExample>& valid, int workers);

/// Builds a routing policy for `variant`. The oracle needs `hindsight`.
RoutingPolicy routing_policy_for(Variant variant, const RouterBundle& router, FeatureMask mask,
                                 const HindsightTable* hindsight, std::optional<int> budget);

enum class AblationGrid { LambdaCons, Cvar, Mask };
AblationGrid ablation_grid_from_string(const std::string& name);

std::vector<SweepRow> ablate_stage(const RunConfig& cfg, const World& w, AblationGrid grid, const SoftmaxPolicy& bc,
                                   const std::vector<PreferencePair>& pairs,
                                   const std::vector<ConsistencyPair>& consistency, const std::vector<RoutingExample>& train,
                                   const std::vector<RoutingExample>& valid, const RouterBundle& router,
                                   const SoftmaxPolicy& distilled, int workers);

// File-backed stages. Each checks its predecessors' headers and throws
// StageError naming the first missing artifact.
json run_gen_tasks(const RunConfig& cfg, const Artifacts& a);
json run_collect(const RunConfig& cfg, const Artifacts& a);
json run_train_bc(const RunConfig& cfg, const Artifacts& a);
json run_build_pairs(const RunConfig& cfg, const Artifacts& a);
json run_distill(const RunConfig& cfg, const Artifacts& a);
json run_collect_routing(const RunConfig& cfg, const Artifacts& a, int workers);
json run_train_router(const RunConfig& cfg, const Artifacts& a);

struct RolloutOptions {
  Variant variant = Variant::RiskRouter;
  std::optional<int> budget;
  std::string tasks = "test";
  int seeds = 5;
  std::filesystem::path out;
};
json run_rollout(const RunConfig& cfg, const Artifacts& a, const RolloutOptions& opt, int workers);
json run_evaluate(const RunConfig& cfg, const Artifacts& a, int workers);
json run_ablate(const RunConfig& cfg, const Artifacts& a, AblationGrid grid, int workers);

/// gen-tasks through evaluate in order.
void run_all_stages(const RunConfig& cfg, const Artifacts& a, int workers);

/// Writes JSON with sorted keys and a trailing newline.
void write_json(const std::filesystem::path& path, const json& j);

/// Sink for provenance warnings (stderr by default).
void set_warning_sink(std::function<void(const std::string&)> sink);

}  // namespace riskroute

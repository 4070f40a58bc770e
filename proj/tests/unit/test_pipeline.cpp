#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "riskroute/pipeline.hpp"

using namespace riskroute;

namespace {

RunConfig small_config() {
  RunConfig c;
  c.env.task_count = 24;
  c.policy.teacher_seeds_per_task = 2;
  c.policy.bc_epochs = 60;
  c.distill.epochs = 30;
  c.router.routing_seeds_per_task = 6;
  c.router.train.epochs = 3;
  c.eval.seeds_per_task = 4;
  c.eval.bootstrap_resamples = 100;
  return c;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("stages refuse to run out of order") {
  const RunConfig cfg = small_config();
  TempDir dir("riskroute_stage_guard");
  const Artifacts a(dir.path);
  std::filesystem::create_directories(a.dir);
  CHECK_THROWS_AS(run_collect(cfg, a), StageError);
  run_gen_tasks(cfg, a);
  run_collect(cfg, a);
  try {
    run_distill(cfg, a);
    FAIL("distill ran before train-bc");
  } catch (const StageError& e) {
    CHECK(std::string(e.what()).find("missing stage train-bc artifact") != std::string::npos);
  }
  CHECK_THROWS_AS(run_train_router(cfg, a), StageError);
  CHECK_THROWS_AS(run_evaluate(cfg, a, 1), StageError);
}

TEST_CASE("artifacts from another config raise a warning") {
  const RunConfig cfg = small_config();
  TempDir dir("riskroute_stage_hash");
  const Artifacts a(dir.path);
  std::vector<std::string> warnings;
  set_warning_sink([&](const std::string& w) { warnings.push_back(w); });
  run_gen_tasks(cfg, a);
  CHECK(warnings.empty());
  RunConfig other = cfg;
  other.policy.seed += 1;
  CHECK_NOTHROW(run_collect(other, a));
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find(config_hash(cfg)) != std::string::npos);
  CHECK(warnings[0].find(config_hash(other)) != std::string::npos);
  set_warning_sink([](const std::string&) {});
}

TEST_CASE("file pipeline end to end") {
  const RunConfig cfg = small_config();
  TempDir dir("riskroute_pipeline_smoke");
  const Artifacts a(dir.path);
  run_all_stages(cfg, a, 2);
  const json summary = json::parse(slurp(a.summary()));
  CHECK(summary["variants"].size() == 6);
  for (Variant v : kAllVariants) CHECK(summary["variants"].contains(std::string(to_string(v))));
  CHECK(summary["config_hash"] == config_hash(cfg));
  CHECK(summary["variants"]["llm_only"]["llm_rate"] == 1.0);
  CHECK(summary["variants"]["slm_only"]["llm_rate"] == 0.0);
  CHECK(std::filesystem::exists(a.pareto()));
  CHECK(std::filesystem::exists(a.metrics()));

  const std::string first = slurp(a.summary());
  run_evaluate(cfg, a, 1);
  CHECK(slurp(a.summary()) == first);

  RolloutOptions opt;
  opt.variant = Variant::RiskRouter;
  opt.budget = 2;
  opt.seeds = 2;
  opt.out = dir.path / "rollout.rljson";
  run_rollout(cfg, a, opt, 2);
  for (const auto& ep : read_episodes(opt.out)) {
    CHECK(ep.llm_calls <= 2);
    CHECK(ep.llm_calls == ep.recount_llm_calls());
  }

  CHECK(run_ablate(cfg, a, AblationGrid::Mask, 2)["rows"] == 8);
}

TEST_CASE("ablation grids") {
  RunConfig cfg = small_config();
  const World w(cfg);
  const auto pool = collect_stage(cfg, w);
  const auto bc = train_bc_stage(cfg, pool);
  const auto built = build_pairs_stage(cfg, w, bc.policy, pool);
  const auto d = distill_stage(cfg, bc.policy, built.pairs, built.consistency);
  CHECK(d.reference_hash_before == d.reference_hash_after);
  const auto rd = collect_routing_stage(cfg, w, d.policy, 2);
  const auto rb = train_router_stage(cfg, rd.train.examples, rd.valid.examples);
  const auto ev = evaluate_stage(cfg, w, d.policy, rb, rd.valid.examples, 2);
  REQUIRE(ev.rows.size() == 6);

  SUBCASE("singleton cvar grid reproduces evaluate") {
    cfg.eval.cvar_grid = {{cfg.router.train.cvar.alpha, cfg.router.train.cvar.epsilon}};
    const auto rows = ablate_stage(cfg, w, AblationGrid::Cvar, bc.policy, built.pairs, built.consistency,
                                   rd.train.examples, rd.valid.examples, rb, d.policy, 2);
    REQUIRE(rows.size() == 1);
    const auto& direct = ev.rows[4];
    REQUIRE(direct.variant == "risk_router");
    CHECK(metrics_to_json(rows[0].metrics) == metrics_to_json(direct.metrics));
  }
  SUBCASE("full cvar grid has one row per point") {
    cfg.router.train.epochs = 1;
    const auto rows = ablate_stage(cfg, w, AblationGrid::Cvar, bc.policy, built.pairs, built.consistency,
                                   rd.train.examples, rd.valid.examples, rb, d.policy, 2);
    CHECK(rows.size() == 8);
  }
}

#include <CLI11.hpp>

#include <iostream>
#include <thread>

#include "riskroute/config.hpp"
#include "riskroute/pipeline.hpp"
#include "riskroute/records.hpp"
#include "riskroute/runtime.hpp"
#include "riskroute/theory.hpp"

namespace rr = riskroute;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr int kExitTheory = 4;

void print(const rr::json& j) { std::cout << j.dump(2) << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"riskroute: risk-calibrated step routing between a small and a large policy"};
  app.require_subcommand(1);

  std::string config_path;
  std::string run_dir = "run";
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_option("-c,--config", config_path, "run config (JSON); defaults apply when omitted");
  app.add_option("-d,--dir", run_dir, "artifact directory")->capture_default_str();
  app.add_option("-w,--workers", workers, "rollout worker threads")->check(CLI::PositiveNumber)->capture_default_str();

  auto* gen = app.add_subcommand("gen-tasks", "write the task manifest and split");
  auto* collect = app.add_subcommand("collect", "teacher rollouts on the train split");
  auto* train_bc = app.add_subcommand("train-bc", "behavior cloning");
  auto* pairs = app.add_subcommand("build-pairs", "preference and consistency pairs from the BC policy");
  auto* distill = app.add_subcommand("distill", "DPO + consistency recovery distillation");
  auto* routing = app.add_subcommand("collect-routing", "SLM-only rollouts and routing labels");
  auto* router = app.add_subcommand("train-router", "CVaR-constrained router training and calibration");

  auto* rollout = app.add_subcommand("rollout", "run one routing variant");
  std::string variant = "risk_router";
  std::string tasks = "test";
  int seeds = 5;
  int budget = -1;
  std::string out;
  rollout->add_option("--variant", variant, "slm_only|llm_only|entropy|heuristic|risk_router|oracle")
      ->capture_default_str();
  rollout->add_option("--budget", budget, "per-episode LLM call cap; negative means unbounded");
  rollout->add_option("--tasks", tasks, "train|valid|test|all")->capture_default_str();
  rollout->add_option("--seeds", seeds, "seeds per task")->check(CLI::PositiveNumber)->capture_default_str();
  rollout->add_option("--out", out, "episodes file");

  auto* evaluate = app.add_subcommand("evaluate", "all variants on the test split");
  auto* ablate = app.add_subcommand("ablate", "sweep lambda_cons, the CVaR grid or feature masks");
  std::string grid = "mask";
  ablate->add_option("--grid", grid, "lambda_cons|cvar|mask")->capture_default_str();

  auto* extract = app.add_subcommand("extract-features", "episodes with features -> routing examples");
  std::string extract_in, extract_out;
  extract->add_option("--in", extract_in, "episodes file")->required();
  extract->add_option("--out", extract_out, "routing examples file")->required();

  auto* pipeline = app.add_subcommand("pipeline", "gen-tasks through evaluate");
  auto* show = app.add_subcommand("show-config", "print the resolved config and its hash");
  auto* theory = app.add_subcommand("verify-theory", "run the property and oracle suite");
  bool quick = false;
  theory->add_flag("--quick", quick, "smaller Monte Carlo budgets");

  CLI11_PARSE(app, argc, argv);

  try {
    if (theory->parsed()) {
      bool ok = true;
      for (const auto& r : rr::run_theory_suite(quick)) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
        ok = ok && r.passed;
      }
      return ok ? 0 : kExitTheory;
    }

    const rr::RunConfig cfg = rr::load_config(config_path);
    const rr::Artifacts a(run_dir);

    if (show->parsed()) {
      print(rr::config_to_json(cfg));
      std::cerr << "hash " << rr::config_hash(cfg) << '\n';
    }
    if (gen->parsed()) print(rr::run_gen_tasks(cfg, a));
    if (collect->parsed()) print(rr::run_collect(cfg, a));
    if (train_bc->parsed()) print(rr::run_train_bc(cfg, a));
    if (pairs->parsed()) print(rr::run_build_pairs(cfg, a));
    if (distill->parsed()) print(rr::run_distill(cfg, a));
    if (routing->parsed()) print(rr::run_collect_routing(cfg, a, workers));
    if (router->parsed()) print(rr::run_train_router(cfg, a));
    if (rollout->parsed()) {
      rr::RolloutOptions opt;
      opt.variant = rr::variant_from_string(variant);
      if (budget >= 0) opt.budget = budget;
      else opt.budget = cfg.runtime.budget;
      opt.tasks = tasks;
      opt.seeds = seeds;
      opt.out = out;
      print(rr::run_rollout(cfg, a, opt, workers));
    }
    if (evaluate->parsed()) print(rr::run_evaluate(cfg, a, workers));
    if (ablate->parsed()) print(rr::run_ablate(cfg, a, rr::ablation_grid_from_string(grid), workers));
    if (extract->parsed()) {
      const auto eps = rr::read_episodes(extract_in);
      const auto ex = rr::routing_examples(eps);
      rr::write_routing_examples(extract_out, {"extract-features", rr::config_hash(cfg), rr::json::object()}, ex);
      print({{"episodes", eps.size()}, {"examples", ex.size()}});
    }
    if (pipeline->parsed()) {
      rr::run_all_stages(cfg, a, workers);
      std::ifstream f(a.summary());
      std::cout << f.rdbuf();
    }
  } catch (const rr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const rr::StageError& e) {
    std::cerr << "stage error: " << e.what() << '\n';
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

#include "riskroute/pipeline.hpp"

#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

namespace riskroute {
namespace {

std::function<void(const std::string&)>& warning_sink() {
  static std::function<void(const std::string&)> sink = [](const std::string& m) {
    std::cerr << "warning: " << m << '\n';
  };
  return sink;
}

void warn(const std::string& m) {
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  if (warning_sink()) warning_sink()(m);
}

ArtifactHeader header_for(const char* stage_name, const RunConfig& cfg) {
  return {stage_name, config_hash(cfg), json::object()};
}

void check_header(const ArtifactHeader& h, const char* expected, const std::filesystem::path& path,
                  const RunConfig& cfg) {
  if (h.stage != expected)
    throw StageError("missing stage " + std::string(expected) + " artifact: " + path.string() + " carries stage '" +
                     h.stage + "'");
  if (h.config_hash != config_hash(cfg))
    warn(path.string() + " was produced under config " + h.config_hash + ", current config is " + config_hash(cfg));
}

void require_exists(const std::filesystem::path& path, const char* stage_name) {
  if (!std::filesystem::exists(path))
    throw StageError("missing stage " + std::string(stage_name) + " artifact: " + path.string());
}

void require_record_file(const std::filesystem::path& path, const char* stage_name, const RunConfig& cfg) {
  require_exists(path, stage_name);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  const json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("schema") || j.at("schema") != kHeaderSchema)
    throw StageError("missing stage " + std::string(stage_name) + " artifact: " + path.string() + " has no header");
  check_header(header_from_json(j), stage_name, path, cfg);
}

json require_json_file(const std::filesystem::path& path, const char* stage_name, const RunConfig& cfg) {
  require_exists(path, stage_name);
  std::ifstream f(path);
  json j = json::parse(f, nullptr, false);
  if (j.is_discarded() || !j.contains("header"))
    throw StageError("missing stage " + std::string(stage_name) + " artifact: " + path.string() + " has no header");
  check_header(header_from_json(j.at("header")), stage_name, path, cfg);
  return j;
}

SoftmaxPolicy require_policy(const std::filesystem::path& path, const char* stage_name, PolicyStage expected,
                             const RunConfig& cfg) {
  require_exists(path, stage_name);
  std::string hash;
  SoftmaxPolicy p = load_policy(path, cfg.env, &hash);
  if (p.stage() != expected)
    throw StageError("missing stage " + std::string(stage_name) + " artifact: " + path.string() + " holds a '" +
                     std::string(to_string(p.stage())) + "' policy");
  if (hash != config_hash(cfg)) warn(path.string() + " was produced under config " + hash);
  return p;
}

RouterBundle require_router(const RunConfig& cfg, const Artifacts& a) {
  require_exists(a.router(), stage::kTrainRouter);
  const json th = require_json_file(a.thresholds(), stage::kTrainRouter, cfg);
  std::string hash;
  RouterBundle b{load_router(a.router(), &hash), {}, {}, 0.5, 0.5};
  if (hash != config_hash(cfg)) warn(a.router().string() + " was produced under config " + hash);
  b.tau_entropy = th.at("tau_entropy").get<double>();
  b.theta_verifier = th.at("theta_verifier").get<double>();
  b.temperature.temperature = b.model.net.temperature();
  return b;
}

std::vector<RiskFeatures> features_of(const std::vector<RoutingExample>& ex, FeatureMask mask) {
  std::vector<RiskFeatures> f;
  f.reserve(ex.size());
  for (const auto& e : ex) f.push_back(apply_mask(e.features, mask));
  return f;
}

std::vector<int> labels_of(const std::vector<RoutingExample>& ex) {
  std::vector<int> y;
  y.reserve(ex.size());
  for (const auto& e : ex) y.push_back(e.label);
  return y;
}

CiOptions ci_options(const RunConfig& cfg) {
  return {cfg.eval.bootstrap_resamples, cfg.eval.ci_level, cfg.eval.bootstrap_seed};
}

/// Calibration diagnostics of the router on the validation split.
void attach_calibration(RunMetrics& m, const RouterNet& net, const std::vector<RoutingExample>& valid,
                        FeatureMask mask) {
  if (valid.empty()) return;
  const auto p = net.predict(features_of(valid, mask));
  const auto y = labels_of(valid);
  m.ece = ece(p, y);
  m.brier = mean_brier(p, y);
  const bool both = std::find(y.begin(), y.end(), 0) != y.end() && std::find(y.begin(), y.end(), 1) != y.end();
  m.auroc = both ? auroc(p, y) : 0.5;
}

std::vector<TaskId> tasks_named(const World& w, const std::string& name) {
  if (name == "train") return w.split.train;
  if (name == "valid") return w.split.valid;
  if (name == "test") return w.split.test;
  if (name == "all") return w.env.task_ids();
  throw ConfigError("--tasks must be one of train, valid, test, all");
}

}  // namespace

void set_warning_sink(std::function<void(const std::string&)> sink) { warning_sink() = std::move(sink); }

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

World::World(const RunConfig& cfg)
    : env(cfg.env),
      split(derive_splits(env.task_ids(), cfg.split_fractions, cfg.split_seed)),
      verifier(env, cfg.verifier),
      teacher(env, cfg.policy.teacher_error_rate) {}

std::vector<PerturbedEpisode> collect_stage(const RunConfig& cfg, const World& w) {
  return collect_teacher_trajectories(w.env, w.teacher, w.split.train, cfg.policy.teacher_seeds_per_task,
                                      cfg.policy.seed);
}

BCResult train_bc_stage(const RunConfig& cfg, const std::vector<PerturbedEpisode>& pool) {
  return train_bc(cfg.env, pool, {cfg.policy.bc_epochs, cfg.policy.bc_learning_rate});
}

PreferenceBuildResult build_pairs_stage(const RunConfig& cfg, const World& w, const SoftmaxPolicy& bc,
                                        const std::vector<PerturbedEpisode>& pool) {
  return build_preferences(bc, pool, w.env, w.verifier, &w.teacher, cfg.distill.candidates, cfg.distill_seed);
}

DistillResult distill_stage(const RunConfig& cfg, const SoftmaxPolicy& bc, const std::vector<PreferencePair>& pairs,
                            const std::vector<ConsistencyPair>& consistency) {
  return train_recovery(bc, pairs, consistency, cfg.distill);
}

Agent make_agent(const RunConfig& cfg, const World& w, const SoftmaxPolicy& slm) {
  return {&w.env, &slm, &w.teacher, &w.verifier, feature_limits(w.env), cfg.runtime.k, cfg.runtime.seed};
}

RoutingData collect_routing_stage(const RunConfig& cfg, const World& w, const SoftmaxPolicy& distilled,
                                  int workers) {
  const Agent agent = make_agent(cfg, w, distilled);
  const int n = cfg.router.routing_seeds_per_task;
  RoutingData d;
  d.train = collect_routing_dataset(agent, make_jobs(w.split.train, n, seed_purpose::kRouting), workers);
  d.valid = collect_routing_dataset(agent, make_jobs(w.split.valid, n, seed_purpose::kRouting), workers);
  return d;
}

RouterBundle train_router_stage(const RunConfig& cfg, const std::vector<RoutingExample>& train,
                                const std::vector<RoutingExample>& valid) {
  TrainResult tr = train_router(train, cfg.router.train);
  RouterBundle b{{std::move(tr.net), 0.5}, std::move(tr.report), {}, 0.5, 0.5};
  b.temperature = fit_temperature(b.model.net, valid);
  if (b.temperature.degenerate) warn("single-label validation split; router temperature left at 1");
  b.model.threshold = select_threshold(b.model.net, valid, cfg.router.train.costs, cfg.router.threshold_mode);
  std::vector<double> entropy, best;
  for (const auto& e : valid) {
    entropy.push_back(e.features[slot::kPolicyEntropy]);
    best.push_back(e.features[slot::kVerifierBest]);
  }
  const auto y = labels_of(valid);
  b.tau_entropy = sweep_threshold(entropy, y, cfg.router.train.costs).threshold;
  b.theta_verifier = sweep_threshold(best, y, cfg.router.train.costs, true).threshold;
  return b;
}

std::vector<EpisodeJob> evaluation_jobs(const RunConfig& cfg, const World& w) {
  return make_jobs(w.split.test, cfg.eval.seeds_per_task, seed_purpose::kEvaluation);
}

RoutingPolicy routing_policy_for(Variant variant, const RouterBundle& router, FeatureMask mask,
                                 const HindsightTable* hindsight, std::optional<int> budget) {
  RoutingPolicy r;
  switch (variant) {
    case Variant::SlmOnly: r = RoutingPolicy::slm_only(); break;
    case Variant::LlmOnly: r = RoutingPolicy::llm_only(); break;
    case Variant::Entropy: r = RoutingPolicy::entropy(router.tau_entropy); break;
    case Variant::Heuristic: r = RoutingPolicy::heuristic(router.theta_verifier); break;
    case Variant::RiskRouter: r = RoutingPolicy::risk_router(router.model.net, router.model.threshold, mask); break;
    case Variant::Oracle:
      if (!hindsight) throw std::invalid_argument("oracle routing needs a hindsight table");
      r = RoutingPolicy::oracle(*hindsight);
      break;
  }
  r.budget = budget;
  return r;
}

Evaluation evaluate_stage(const RunConfig& cfg, const World& w, const SoftmaxPolicy& distilled,
                          const RouterBundle& router, const std::vector<RoutingExample>& valid, int workers) {
  const Agent agent = make_agent(cfg, w, distilled);
  const auto jobs = evaluation_jobs(cfg, w);
  const auto slm = run_episodes(agent, jobs, RoutingPolicy::slm_only(), workers);
  const HindsightTable hindsight = build_hindsight_table(slm);

  Evaluation out;
  json variants = json::object();
  for (Variant v : kAllVariants) {
    const auto eps = v == Variant::SlmOnly
                         ? slm
                         : run_episodes(agent, jobs, routing_policy_for(v, router, cfg.mask, &hindsight,
                                                                        cfg.runtime.budget),
                                        workers);
    RunMetrics m = compute_metrics(eps, ci_options(cfg));
    if (v == Variant::RiskRouter) attach_calibration(m, router.model.net, valid, cfg.mask);
    out.rows.push_back({{}, std::string(to_string(v)), m});
    variants[std::string(to_string(v))] = metrics_to_json(m);
  }
  out.summary = json{{"config_hash", config_hash(cfg)},
                     {"ece_bins", kEceBins},
                     {"bootstrap_resamples", cfg.eval.bootstrap_resamples},
                     {"test_episodes", jobs.size()},
                     {"thresholds",
                      {{"tau_route", router.model.threshold},
                       {"tau_entropy", router.tau_entropy},
                       {"theta_verifier", router.theta_verifier},
                       {"temperature", router.model.net.temperature()}}},
                     {"variants", variants}};
  return out;
}

AblationGrid ablation_grid_from_string(const std::string& name) {
  if (name == "lambda_cons") return AblationGrid::LambdaCons;
  if (name == "cvar") return AblationGrid::Cvar;
  if (name == "mask") return AblationGrid::Mask;
  throw ConfigError("--grid must be one of lambda_cons, cvar, mask");
}

std::vector<SweepRow> ablate_stage(const RunConfig& cfg, const World& w, AblationGrid grid, const SoftmaxPolicy& bc,
                                   const std::vector<PreferencePair>& pairs,
                                   const std::vector<ConsistencyPair>& consistency,
                                   const std::vector<RoutingExample>& train, const std::vector<RoutingExample>& valid,
                                   const RouterBundle& router, const SoftmaxPolicy& distilled, int workers) {
  const auto jobs = evaluation_jobs(cfg, w);
  auto run_router = [&](const SoftmaxPolicy& slm, const RouterBundle& rb, FeatureMask mask,
                        const std::vector<RoutingExample>& calib) {
    const Agent agent = make_agent(cfg, w, slm);
    const auto eps = run_episodes(agent, jobs, routing_policy_for(Variant::RiskRouter, rb, mask, nullptr,
                                                                  cfg.runtime.budget),
                                  workers);
    RunMetrics m = compute_metrics(eps, ci_options(cfg));
    attach_calibration(m, rb.model.net, calib, mask);
    return m;
  };
  auto num = [](double v) {
    std::ostringstream o;
    o << v;
    return o.str();
  };

  std::vector<SweepRow> rows;
  const std::string name(to_string(Variant::RiskRouter));
  switch (grid) {
    case AblationGrid::LambdaCons:
      for (double lc : cfg.eval.lambda_cons_grid) {
        RunConfig c = cfg;
        c.distill.lambda_cons = lc;
        const DistillResult d = distill_stage(c, bc, pairs, consistency);
        const RoutingData rd = collect_routing_stage(c, w, d.policy, workers);
        const RouterBundle rb = train_router_stage(c, rd.train.examples, rd.valid.examples);
        rows.push_back({{{"lambda_cons", num(lc)}, {"cons_jsd", num(consistency_loss(d.policy, consistency))}},
                        name,
                        run_router(d.policy, rb, cfg.mask, rd.valid.examples)});
      }
      break;
    case AblationGrid::Cvar:
      for (const auto& [alpha, eps] : cfg.eval.cvar_grid) {
        RunConfig c = cfg;
        c.router.train.cvar.alpha = alpha;
        c.router.train.cvar.epsilon = eps;
        const RouterBundle rb = train_router_stage(c, train, valid);
        rows.push_back({{{"alpha", num(alpha)}, {"epsilon", num(eps)}}, name, run_router(distilled, rb, cfg.mask, valid)});
      }
      break;
    case AblationGrid::Mask:
      for (FeatureMask m : kAllMasks)
        rows.push_back({{{"mask", std::string(to_string(m))}}, name, run_router(distilled, router, m, valid)});
      break;
  }
  return rows;
}

json run_gen_tasks(const RunConfig& cfg, const Artifacts& a) {
  std::filesystem::create_directories(a.dir);
  const World w(cfg);
  json tasks = json::array();
  for (TaskId id : w.env.task_ids()) {
    const Task& t = w.env.task(id);
    std::vector<int> hazards;
    for (std::size_t i = 0; i < t.hazard.size(); ++i)
      if (t.hazard[i]) hazards.push_back(static_cast<int>(i));
    tasks.push_back({{"id", t.id},
                     {"start", t.start},
                     {"subgoals", t.subgoals},
                     {"terminal", t.terminal},
                     {"hazards", hazards},
                     {"goal", t.goal},
                     {"optimal_length", t.optimal_length}});
  }
  const ArtifactHeader h = header_for(stage::kTasks, cfg);
  write_json(a.tasks(), {{"header", header_to_json(h)}, {"tasks", tasks}});
  write_json(a.split(), {{"header", header_to_json(h)}, {"split", split_to_json(w.split)}});
  return {{"tasks", tasks.size()},
          {"train", w.split.train.size()},
          {"valid", w.split.valid.size()},
          {"test", w.split.test.size()}};
}

json run_collect(const RunConfig& cfg, const Artifacts& a) {
  require_json_file(a.tasks(), stage::kTasks, cfg);
  const World w(cfg);
  const auto pool = collect_stage(cfg, w);
  write_episodes(a.teacher(), header_for(stage::kCollect, cfg), pool);
  std::size_t ok = 0, steps = 0;
  for (const auto& ep : pool) {
    ok += ep.success;
    steps += ep.steps.size();
  }
  return {{"episodes", pool.size()}, {"steps", steps}, {"successes", ok}};
}

json run_train_bc(const RunConfig& cfg, const Artifacts& a) {
  require_record_file(a.teacher(), stage::kCollect, cfg);
  const auto pool = read_episodes(a.teacher());
  const BCResult r = train_bc_stage(cfg, pool);
  save_policy(a.policy_bc(), r.policy, config_hash(cfg));
  return {{"examples", r.examples}, {"initial_loss", r.trace.losses.front()}, {"final_loss", r.trace.losses.back()}};
}

json run_build_pairs(const RunConfig& cfg, const Artifacts& a) {
  const SoftmaxPolicy bc = require_policy(a.policy_bc(), stage::kTrainBc, PolicyStage::BehaviorCloned, cfg);
  require_record_file(a.teacher(), stage::kCollect, cfg);
  const World w(cfg);
  const auto pool = read_episodes(a.teacher());
  const PreferenceBuildResult r = build_pairs_stage(cfg, w, bc, pool);
  write_pairs(a.pairs(), header_for(stage::kBuildPairs, cfg), r.pairs, r.consistency);
  return {{"contexts", r.contexts},
          {"pairs", r.pairs.size()},
          {"verifier_ranked", r.verifier_ranked},
          {"teacher_recovered", r.teacher_recovered},
          {"skipped_identical", r.skipped_identical},
          {"skipped_no_teacher", r.skipped_no_teacher},
          {"consistency_pairs", r.consistency.size()}};
}

json run_distill(const RunConfig& cfg, const Artifacts& a) {
  const SoftmaxPolicy bc = require_policy(a.policy_bc(), stage::kTrainBc, PolicyStage::BehaviorCloned, cfg);
  require_record_file(a.pairs(), stage::kBuildPairs, cfg);
  std::vector<PreferencePair> pairs;
  std::vector<ConsistencyPair> cons;
  read_pairs(a.pairs(), pairs, cons);
  const DistillResult r = distill_stage(cfg, bc, pairs, cons);
  save_policy(a.policy_distilled(), r.policy, config_hash(cfg));
  std::size_t verifier = 0;
  for (const auto& p : pairs) verifier += p.source == PairSource::VerifierRanked;
  const json report = {{"pairs", pairs.size()},
                       {"verifier_ranked", verifier},
                       {"teacher_recovered", pairs.size() - verifier},
                       {"consistency_pairs", cons.size()},
                       {"initial_objective", r.trace.losses.front()},
                       {"final_objective", r.trace.losses.back()},
                       {"final_dpo", r.final_dpo},
                       {"final_consistency", r.final_consistency},
                       {"reference_hash_unchanged", r.reference_hash_before == r.reference_hash_after}};
  write_json(a.distill_report(), {{"header", header_to_json(header_for(stage::kDistill, cfg))}, {"report", report}});
  return report;
}

json run_collect_routing(const RunConfig& cfg, const Artifacts& a, int workers) {
  const SoftmaxPolicy d = require_policy(a.policy_distilled(), stage::kDistill, PolicyStage::Distilled, cfg);
  const World w(cfg);
  const RoutingData rd = collect_routing_stage(cfg, w, d, workers);
  const ArtifactHeader h = header_for(stage::kCollectRouting, cfg);
  write_routing_examples(a.routing(), h, rd.train.examples);
  write_routing_examples(a.routing_valid(), h, rd.valid.examples);
  auto positives = [](const std::vector<RoutingExample>& ex) {
    std::size_t n = 0;
    for (const auto& e : ex) n += e.label;
    return n;
  };
  return {{"train_examples", rd.train.examples.size()},
          {"train_positive", positives(rd.train.examples)},
          {"valid_examples", rd.valid.examples.size()},
          {"valid_positive", positives(rd.valid.examples)}};
}

json run_train_router(const RunConfig& cfg, const Artifacts& a) {
  require_record_file(a.routing(), stage::kCollectRouting, cfg);
  require_record_file(a.routing_valid(), stage::kCollectRouting, cfg);
  const auto train = read_routing_examples(a.routing());
  const auto valid = read_routing_examples(a.routing_valid());
  const RouterBundle b = train_router_stage(cfg, train, valid);
  save_router(a.router(), b.model, config_hash(cfg));
  write_report_csv(a.router_report(), b.report);
  const json th = {{"header", header_to_json(header_for(stage::kTrainRouter, cfg))},
                   {"tau_route", b.model.threshold},
                   {"tau_entropy", b.tau_entropy},
                   {"theta_verifier", b.theta_verifier},
                   {"threshold_mode", cfg.router.threshold_mode == ThresholdMode::Bayes ? "bayes" : "sweep"},
                   {"temperature", b.temperature.temperature},
                   {"temperature_fit",
                    {{"nll_before", b.temperature.nll_before},
                     {"nll_after", b.temperature.nll_after},
                     {"ece_before", b.temperature.ece_before},
                     {"ece_after", b.temperature.ece_after},
                     {"degenerate", b.temperature.degenerate},
                     {"guarded", b.temperature.guarded}}}};
  write_json(a.thresholds(), th);
  json out = th;
  out.erase("header");
  out["final_lambda"] = b.report.empty() ? cfg.router.train.cvar.lambda_init : b.report.back().lambda;
  return out;
}

json run_rollout(const RunConfig& cfg, const Artifacts& a, const RolloutOptions& opt, int workers) {
  const SoftmaxPolicy d = require_policy(a.policy_distilled(), stage::kDistill, PolicyStage::Distilled, cfg);
  RouterBundle rb{{RouterNet(), 0.5}, {}, {}, 0.5, 0.5};
  if (opt.variant == Variant::RiskRouter || opt.variant == Variant::Entropy || opt.variant == Variant::Heuristic)
    rb = require_router(cfg, a);
  const World w(cfg);
  const Agent agent = make_agent(cfg, w, d);
  const auto jobs = make_jobs(tasks_named(w, opt.tasks), opt.seeds, seed_purpose::kEvaluation);
  std::vector<PerturbedEpisode> eps;
  if (opt.variant == Variant::Oracle) {
    const HindsightTable table = build_hindsight_table(run_episodes(agent, jobs, RoutingPolicy::slm_only(), workers));
    eps = run_episodes(agent, jobs, routing_policy_for(opt.variant, rb, cfg.mask, &table, opt.budget), workers);
  } else {
    eps = run_episodes(agent, jobs, routing_policy_for(opt.variant, rb, cfg.mask, nullptr, opt.budget), workers);
  }
  const auto out = opt.out.empty() ? a.dir / ("rollout_" + std::string(to_string(opt.variant)) + ".rljson") : opt.out;
  write_episodes(out, header_for(stage::kRollout, cfg), eps);
  json j = metrics_to_json(compute_metrics(eps, ci_options(cfg)));
  j["out"] = out.string();
  return j;
}

json run_evaluate(const RunConfig& cfg, const Artifacts& a, int workers) {
  const SoftmaxPolicy d = require_policy(a.policy_distilled(), stage::kDistill, PolicyStage::Distilled, cfg);
  const RouterBundle rb = require_router(cfg, a);
  require_record_file(a.routing_valid(), stage::kCollectRouting, cfg);
  const auto valid = read_routing_examples(a.routing_valid());
  const World w(cfg);
  const Evaluation ev = evaluate_stage(cfg, w, d, rb, valid, workers);
  write_metrics_csv(a.metrics(), ev.rows);
  write_pareto_csv(a.pareto(), ev.rows);
  write_json(a.summary(), ev.summary);
  return ev.summary;
}

json run_ablate(const RunConfig& cfg, const Artifacts& a, AblationGrid grid, int workers) {
  const SoftmaxPolicy bc = require_policy(a.policy_bc(), stage::kTrainBc, PolicyStage::BehaviorCloned, cfg);
  const SoftmaxPolicy d = require_policy(a.policy_distilled(), stage::kDistill, PolicyStage::Distilled, cfg);
  require_record_file(a.pairs(), stage::kBuildPairs, cfg);
  require_record_file(a.routing(), stage::kCollectRouting, cfg);
  require_record_file(a.routing_valid(), stage::kCollectRouting, cfg);
  const RouterBundle rb = require_router(cfg, a);
  std::vector<PreferencePair> pairs;
  std::vector<ConsistencyPair> cons;
  read_pairs(a.pairs(), pairs, cons);
  const auto train = read_routing_examples(a.routing());
  const auto valid = read_routing_examples(a.routing_valid());
  const World w(cfg);
  const auto rows = ablate_stage(cfg, w, grid, bc, pairs, cons, train, valid, rb, d, workers);
  const std::string name = grid == AblationGrid::LambdaCons ? "lambda_cons" : grid == AblationGrid::Cvar ? "cvar" : "mask";
  const auto path = a.dir / ("ablation_" + name + ".csv");
  write_metrics_csv(path, rows);
  return {{"rows", rows.size()}, {"out", path.string()}};
}

void run_all_stages(const RunConfig& cfg, const Artifacts& a, int workers) {
  run_gen_tasks(cfg, a);
  run_collect(cfg, a);
  run_train_bc(cfg, a);
  run_build_pairs(cfg, a);
  run_distill(cfg, a);
  run_collect_routing(cfg, a, workers);
  run_train_router(cfg, a);
  run_evaluate(cfg, a, workers);
}

}  // namespace riskroute

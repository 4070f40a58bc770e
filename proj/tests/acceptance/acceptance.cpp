#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <thread>

#include "riskroute/config.hpp"
#include "riskroute/pipeline.hpp"
#include "riskroute/theory.hpp"

namespace rr = riskroute;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Line {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream o;
  o.precision(digits);
  o << v;
  return o.str();
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int worker_count() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

fs::path config_dir() { return RISKROUTE_CONFIG_DIR; }

rr::RunConfig load(const std::string& name) { return rr::load_config(config_dir() / name); }

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Criterion 9.
Line pipeline_invariants() {
  Line line{9, "pipeline invariants", true, ""};
  const rr::RunConfig cfg = load("default.json");
  const rr::World w(cfg);
  std::ostringstream detail;

  const auto pool = rr::collect_stage(cfg, w);
  const auto bc = rr::train_bc_stage(cfg, pool);
  const auto built = rr::build_pairs_stage(cfg, w, bc.policy, pool);
  const auto distilled = rr::distill_stage(cfg, bc.policy, built.pairs, built.consistency);
  const bool hash_ok = distilled.reference_hash_before == bc.policy.hash() &&
                       distilled.reference_hash_after == bc.policy.hash();
  line.passed = line.passed && hash_ok;
  detail << "reference hash " << (hash_ok ? "unchanged" : "CHANGED");

  bool guard = false;
  {
    TempDir dir("riskroute_acceptance_guard");
    const rr::Artifacts a(dir.path);
    rr::run_gen_tasks(cfg, a);
    rr::run_collect(cfg, a);
    try {
      rr::run_distill(cfg, a);
    } catch (const rr::StageError& e) {
      guard = std::string(e.what()).find("train-bc") != std::string::npos;
    }
  }
  line.passed = line.passed && guard;
  detail << "; stage guard " << (guard ? "fired" : "DID NOT FIRE");

  rr::Agent agent = rr::make_agent(cfg, w, distilled.policy);
  rr::RouterNet net;
  rr::Rng rng(0xB0D6E7);
  net.initialize(rng);
  const auto tasks = w.env.task_ids();
  int over = 0, miscount = 0, broken = 0, llm_total = 0;
  for (int i = 0; i < 1000; ++i) {
    rr::RoutingPolicy pol;
    switch (rng.uniform_int(5)) {
      case 0: pol = rr::RoutingPolicy::slm_only(); break;
      case 1: pol = rr::RoutingPolicy::llm_only(); break;
      case 2: pol = rr::RoutingPolicy::entropy(rng.uniform()); break;
      case 3: pol = rr::RoutingPolicy::heuristic(rng.uniform()); break;
      default: pol = rr::RoutingPolicy::risk_router(net, rng.uniform()); break;
    }
    const int budget = static_cast<int>(rng.uniform_int(7));
    pol.budget = budget;
    const rr::TaskId task = tasks[rng.uniform_int(tasks.size())];
    const auto ep = rr::run_episode(agent, task, {rng.next_u64()}, pol);
    over += ep.llm_calls > budget;
    try {
      ep.check_invariants();
    } catch (const std::logic_error&) {
      ++broken;
    }
    miscount += ep.llm_calls != ep.recount_llm_calls();
    llm_total += ep.llm_calls;
  }
  line.passed = line.passed && over == 0 && miscount == 0 && broken == 0;
  detail << "; budget exceeded in " << over << "/1000 episodes (" << llm_total << " LLM calls), " << miscount
         << " recount mismatches, " << broken << " invariant violations";

  const auto rd = rr::collect_routing_stage(cfg, w, distilled.policy, worker_count());
  std::size_t k = 0, label_errors = 0;
  for (const auto* col : {&rd.train, &rd.valid}) {
    k = 0;
    for (const auto& ep : col->episodes) {
      label_errors += ep.llm_calls != 0 || ep.recount_llm_calls() != 0;
      for (std::size_t t = 0; t < ep.steps.size(); ++t, ++k) {
        const auto& ex = col->examples[k];
        label_errors += ex.label != (ep.success ? 0 : 1) || ex.seed_id != rr::seed_id(ep.task_id, ep.seed) ||
                        ex.step_index != static_cast<int>(t);
      }
    }
    label_errors += k != col->examples.size();
  }
  line.passed = line.passed && label_errors == 0;
  detail << "; label recount mismatches " << label_errors << " over "
         << rd.train.examples.size() + rd.valid.examples.size() << " examples";
  line.detail = detail.str();
  return line;
}

// Seed-grouped planted routing data: each seed has a latent difficulty d and
// one episode outcome y ~ Bernoulli(clip(d)); feature 0 observes d with noise.
std::vector<rr::RoutingExample> seeded_planted(int seeds, int steps, std::uint64_t key) {
  rr::Rng rng(key);
  std::vector<rr::RoutingExample> out;
  for (int s = 0; s < seeds; ++s) {
    const double d = rng.uniform();
    const int y = rng.bernoulli(std::clamp(d, 0.05, 0.95));
    for (int t = 0; t < steps; ++t) {
      rr::RoutingExample e;
      e.seed_id = static_cast<std::uint64_t>(s);
      e.step_index = t;
      e.label = y;
      e.features[0] = d + 0.1 * rng.normal();
      for (std::size_t i = 1; i < rr::kFeatureDim; ++i) e.features[i] = rng.uniform();
      out.push_back(e);
    }
  }
  return out;
}

// Criterion 10.
Line cvar_knob() {
  Line line{10, "CVaR knob direction", true, ""};
  const auto train = seeded_planted(6000, 8, 1);
  const auto eval = seeded_planted(1000, 10, 2);
  std::vector<rr::RiskFeatures> fs;
  for (const auto& e : eval) fs.push_back(e.features);

  const std::vector<std::pair<double, double>> grid = {{0.05, 0.02}, {0.20, 0.10}, {0.20, 0.15}};
  const rr::CostSpec costs;
  const double tau = rr::bayes_threshold(costs);
  struct Cell {
    double escalation = 0.0;
    double lambda = 0.0;
  };
  auto run = [&](std::size_t g, std::uint64_t seed) {
    rr::TrainSpec spec;
    spec.costs = costs;
    spec.cvar.alpha = grid[g].first;
    spec.cvar.epsilon = grid[g].second;
    spec.seed = seed;
    const auto res = rr::train_router(train, spec);
    const auto p = res.net.predict(fs);
    const auto n = std::count_if(p.begin(), p.end(), [&](double v) { return rr::escalate(v, tau); });
    return Cell{static_cast<double>(n) / static_cast<double>(p.size()), res.lambda_trace.back()};
  };
  std::vector<std::future<Cell>> jobs;
  for (std::size_t g = 0; g < grid.size(); ++g)
    for (std::uint64_t s = 1; s <= 3; ++s)
      jobs.push_back(std::async(worker_count() > 1 ? std::launch::async : std::launch::deferred, run, g, s));
  std::vector<Cell> cells;
  for (auto& j : jobs) cells.push_back(j.get());

  std::ostringstream detail;
  std::vector<double> means(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    detail << (g ? "; " : "") << "(" << grid[g].first << "," << grid[g].second << ") esc";
    for (std::size_t s = 0; s < 3; ++s) {
      const Cell& c = cells[g * 3 + s];
      means[g] += c.escalation / 3.0;
      detail << (s ? "/" : " ") << fmt(c.escalation, 3);
    }
    detail << " lambda " << fmt(cells[g * 3].lambda, 3);
  }
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t g = 1; g < grid.size(); ++g)
      line.passed = line.passed && cells[g * 3 + s].escalation <= cells[(g - 1) * 3 + s].escalation;
  for (std::size_t g = 1; g < grid.size(); ++g) line.passed = line.passed && means[g] <= means[g - 1];
  detail << "; means " << fmt(means[0], 3) << " >= " << fmt(means[1], 3) << " >= " << fmt(means[2], 3);
  line.detail = detail.str();
  return line;
}

// Criterion 11.
Line pareto_sanity() {
  Line line{11, "Pareto sanity in the high-risk regime", false, ""};
  const rr::RunConfig cfg = load("high_risk.json");
  const rr::World w(cfg);
  const int workers = worker_count();
  const auto pool = rr::collect_stage(cfg, w);
  const auto bc = rr::train_bc_stage(cfg, pool);
  const auto built = rr::build_pairs_stage(cfg, w, bc.policy, pool);
  const auto distilled = rr::distill_stage(cfg, bc.policy, built.pairs, built.consistency);
  const auto rd = rr::collect_routing_stage(cfg, w, distilled.policy, workers);
  const auto router = rr::train_router_stage(cfg, rd.train.examples, rd.valid.examples);

  constexpr double kMatchTolerance = 0.01;
  int wins = 0;
  std::ostringstream detail;
  for (std::uint64_t h = 0; h < 5; ++h) {
    rr::RunConfig c = cfg;
    c.runtime.seed = cfg.runtime.seed + h;
    const auto ev = rr::evaluate_stage(c, w, distilled.policy, router, rd.valid.examples, workers);
    auto get = [&](const char* name) {
      for (const auto& r : ev.rows)
        if (r.variant == name) return r.metrics;
      throw std::logic_error("missing variant");
    };
    const auto r2v = get("risk_router"), oracle = get("oracle"), heur = get("heuristic");
    const bool near_oracle = r2v.success_rate >= oracle.success_rate - 0.03 && r2v.llm_rate <= 1.5 * oracle.llm_rate;
    const bool dominates = r2v.success_rate >= heur.success_rate && r2v.llm_rate <= heur.llm_rate &&
                           (r2v.success_rate > heur.success_rate || r2v.llm_rate < heur.llm_rate);
    const bool cheaper = r2v.success_rate >= heur.success_rate - kMatchTolerance && r2v.llm_rate <= 0.75 * heur.llm_rate;
    const bool ok = near_oracle && (dominates || cheaper);
    wins += ok;
    detail << (h ? "; " : "") << "seed " << c.runtime.seed << (ok ? " ok" : " miss") << " r2v "
           << fmt(r2v.success_rate, 3) << "@" << fmt(r2v.llm_rate, 3) << " oracle " << fmt(oracle.success_rate, 3)
           << "@" << fmt(oracle.llm_rate, 3) << " heuristic " << fmt(heur.success_rate, 3) << "@"
           << fmt(heur.llm_rate, 3);
  }
  line.passed = wins >= 3;
  line.detail = std::to_string(wins) + "/5 harness seeds; " + detail.str();
  return line;
}

// Criterion 12.
Line determinism_and_speed() {
  Line line{12, "end-to-end determinism and speed", true, ""};
  const rr::RunConfig cfg = load("default.json");
  TempDir a("riskroute_acceptance_run_a"), b("riskroute_acceptance_run_b");
  const int workers = worker_count();
  double secs[2];
  for (int i = 0; i < 2; ++i) {
    const auto t0 = Clock::now();
    rr::run_all_stages(cfg, rr::Artifacts(i == 0 ? a.path : b.path), workers);
    secs[i] = seconds_since(t0);
  }
  std::size_t files = 0, differ = 0;
  for (const auto& entry : fs::directory_iterator(a.path)) {
    ++files;
    const fs::path other = b.path / entry.path().filename();
    differ += !fs::exists(other) || slurp(entry.path()) != slurp(other);
  }
  const bool summary_same = slurp(a.path / "summary.json") == slurp(b.path / "summary.json");
  line.passed = summary_same && differ == 0 && secs[0] <= 300.0 && secs[1] <= 300.0;
  line.detail = std::string("summary.json ") + (summary_same ? "identical" : "DIFFERS") + ", " +
                std::to_string(files - differ) + "/" + std::to_string(files) + " artifacts identical; runs " +
                fmt(secs[0], 3) + " s and " + fmt(secs[1], 3) + " s on " + std::to_string(workers) +
                " worker(s) (limit 300 s)";
  return line;
}

}  // namespace

int main() {
  rr::set_warning_sink([](const std::string&) {});
  std::vector<Line> lines;
  auto guarded = [&](int id, const std::string& name, auto&& fn) {
    const auto t0 = Clock::now();
    Line l;
    try {
      l = fn();
    } catch (const std::exception& e) {
      l = {id, name, false, std::string("exception: ") + e.what()};
    }
    l.detail += " [" + fmt(seconds_since(t0), 3) + " s]";
    std::cout << (l.passed ? "PASS " : "FAIL ") << l.id << ". " << l.name << ": " << l.detail << std::endl;
    lines.push_back(l);
  };

  rr::PlantedCalibration planted;
  const std::vector<std::pair<std::string, std::function<rr::CheckResult()>>> theory = {
      {"calibration recovery", [&] { return rr::check_calibration_recovery(false, &planted); }},
      {"threshold optimality", [] { return rr::check_threshold_optimality(); }},
      {"regret bound", [&] { return rr::check_regret_bound(&planted.net); }},
      {"TV/JSD lemma", [] { return rr::check_tv_jsd(); }},
      {"best-of-K bound", [] { return rr::check_best_of_k(false); }},
      {"noisy DPO sign consistency", [] { return rr::check_noisy_dpo(); }},
      {"consistency transfer", [] { return rr::check_consistency_transfer(false); }},
      {"gradient checks", [] { return rr::check_gradients(); }},
  };
  int id = 0;
  for (const auto& [name, fn] : theory) {
    ++id;
    guarded(id, name, [&, id] {
      const rr::CheckResult r = fn();
      return Line{id, r.name, r.passed, r.detail};
    });
  }
  guarded(9, "pipeline invariants", pipeline_invariants);
  guarded(10, "CVaR knob direction", cvar_knob);
  guarded(11, "Pareto sanity in the high-risk regime", pareto_sanity);
  guarded(12, "end-to-end determinism and speed", determinism_and_speed);

  const auto failed = std::count_if(lines.begin(), lines.end(), [](const Line& l) { return !l.passed; });
  std::cout << (lines.size() - static_cast<std::size_t>(failed)) << "/" << lines.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}

#include "riskroute/theory.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "riskroute/distill.hpp"
#include "riskroute/pipeline.hpp"
#include "riskroute/router.hpp"
#include "riskroute/verifier.hpp"

namespace riskroute {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(6);
  o << v;
  return o.str();
}

double planted_q(double f) { return std::clamp(f, 0.05, 0.95); }

// Expected surrogate at feature f for a hard decision d.
double decision_cost(bool d, double q, const CostSpec& c) { return d ? c.c_llm : c.c_slm + c.kappa * q; }

// Midpoint grid over the planted feature's support.
std::vector<double> feature_grid(int n) {
  std::vector<double> f(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) f[static_cast<std::size_t>(i)] = (i + 0.5) / n;
  return f;
}

std::vector<RiskFeatures> planted_features(const std::vector<double>& f) {
  std::vector<RiskFeatures> out(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) out[i][0] = f[i];
  return out;
}

double norm_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += std::max(a[i] * a[i], b[i] * b[i]);
  }
  return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::vector<double> x, const std::vector<std::size_t>& coords, double h) {
  std::vector<double> g;
  g.reserve(coords.size());
  for (std::size_t i : coords) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    x[i] = x0;
    g.push_back((up - down) / (2.0 * h));
  }
  return g;
}

std::vector<std::size_t> all_coords(std::size_t n) {
  std::vector<std::size_t> c(n);
  std::iota(c.begin(), c.end(), 0);
  return c;
}

}  // namespace

std::vector<RoutingExample> planted_examples(std::size_t n, int seeds, std::uint64_t key) {
  Rng rng(key);
  std::vector<RoutingExample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double f = rng.uniform();
    out[i].features[0] = f;
    out[i].label = rng.bernoulli(planted_q(f)) ? 1 : 0;
    out[i].seed_id = i % static_cast<std::size_t>(seeds);
    out[i].step_index = static_cast<int>(i / static_cast<std::size_t>(seeds));
  }
  return out;
}

PlantedCalibration train_planted(std::size_t n, int seeds, std::uint64_t key) {
  TrainSpec spec;
  spec.seed = key;
  const auto train = planted_examples(n, seeds, hash_keys({key, 1}));
  const auto valid = planted_examples(n / 5, seeds, hash_keys({key, 2}));
  PlantedCalibration out{train_router(train, spec).net, {}, 0.0};
  out.temperature = fit_temperature(out.net, valid);
  const auto grid = feature_grid(10000);
  const auto p = out.net.predict(planted_features(grid));
  double err = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) err += std::abs(p[i] - planted_q(grid[i]));
  out.mean_abs_error = err / static_cast<double>(grid.size());
  return out;
}

CheckResult check_calibration_recovery(bool quick, PlantedCalibration* keep) {
  const auto t0 = Clock::now();
  const std::size_t n = quick ? 20000 : 100000;
  PlantedCalibration run = train_planted(n, 50, 0xCA11B);
  CheckResult r{"calibration recovery", false, "", seconds_since(t0)};
  r.passed = run.mean_abs_error <= 0.05 && (quick || r.seconds <= 60.0);
  r.detail = "E|r-q*| = " + fmt(run.mean_abs_error) + " over " + std::to_string(n) + " examples, T = " +
             fmt(run.temperature.temperature) + ", " + fmt(r.seconds) + " s (limit 60 s)";
  if (keep) *keep = std::move(run);
  return r;
}

CheckResult check_threshold_optimality() {
  const auto t0 = Clock::now();
  // clamp-low, clamp-high and three interior draws
  std::vector<CostSpec> specs = {{0.1, 0.05, 0.2}, {0.002, 0.5, 0.1}};
  Rng rng(0x7B3);
  while (specs.size() < 5) {
    CostSpec c{rng.uniform(0.001, 0.05), 0.0, 0.0};
    c.c_llm = c.c_slm + rng.uniform(0.01, 0.2);
    c.kappa = (c.c_llm - c.c_slm) / rng.uniform(0.15, 0.85);
    specs.push_back(c);
  }
  const auto grid = feature_grid(20000);
  bool ok = true;
  std::ostringstream detail;
  for (const CostSpec& c : specs) {
    const double tau_star = bayes_threshold(c);
    std::vector<double> cost(101);
    for (int i = 0; i <= 100; ++i) {
      const double tau = i / 100.0;
      double s = 0.0;
      for (double f : grid) s += decision_cost(planted_q(f) >= tau, planted_q(f), c);
      cost[static_cast<std::size_t>(i)] = s / static_cast<double>(grid.size());
    }
    const double best = *std::min_element(cost.begin(), cost.end());
    bool near = false;
    for (int i = 0; i <= 100; ++i)
      if (std::abs(i / 100.0 - tau_star) <= 0.01 + 1e-12 && cost[static_cast<std::size_t>(i)] <= best + 1e-12)
        near = true;
    ok = ok && near;
    detail << "tau*=" << fmt(tau_star) << (near ? " ok; " : " MISSED; ");
  }
  const double secs = seconds_since(t0);
  ok = ok && secs <= 10.0;
  detail << fmt(secs) << " s";
  return {"threshold optimality", ok, detail.str(), secs};
}

CheckResult check_regret_bound(const RouterNet* trained) {
  const auto t0 = Clock::now();
  const CostSpec costs;
  const double tau = bayes_threshold(costs);
  const auto grid = feature_grid(10000);
  const auto feats = planted_features(grid);

  std::vector<RouterNet> nets;
  Rng rng(0x9E6);
  for (int i = 0; i < 20; ++i) {
    RouterNet net;
    net.initialize(rng);
    net.set_temperature(std::exp(rng.uniform(-2.0, 2.0)));
    nets.push_back(std::move(net));
  }
  if (trained) nets.push_back(*trained);

  bool ok = true;
  double worst_slack = INFINITY;
  for (const RouterNet& net : nets) {
    const auto p = net.predict(feats);
    double excess = 0.0, gap = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double q = planted_q(grid[i]);
      excess += decision_cost(escalate(p[i], tau), q, costs) - decision_cost(escalate(q, tau), q, costs);
      gap += std::abs(p[i] - q);
    }
    excess /= static_cast<double>(grid.size());
    gap /= static_cast<double>(grid.size());
    const double slack = costs.kappa * gap + 1e-9 - excess;
    worst_slack = std::min(worst_slack, slack);
    ok = ok && slack >= 0.0;
  }
  const double secs = seconds_since(t0);
  ok = ok && secs <= 10.0;
  return {"regret bound", ok,
          std::to_string(nets.size()) + " nets, min slack " + fmt(worst_slack) + (trained ? " (incl. trained)" : "") +
              ", " + fmt(secs) + " s",
          secs};
}

CheckResult check_tv_jsd() {
  const auto t0 = Clock::now();
  Rng rng(0x75D);
  double worst = INFINITY;
  for (int trial = 0; trial < 10000; ++trial) {
    const auto n = static_cast<std::size_t>(2 + rng.uniform_int(9));
    std::vector<double> p(n), q(n);
    // a third of the draws are sparse so near-disjoint supports get covered
    const bool sparse = trial % 3 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = sparse && rng.bernoulli(0.5) ? 0.0 : -std::log(1.0 - rng.uniform());
      q[i] = sparse && rng.bernoulli(0.5) ? 0.0 : -std::log(1.0 - rng.uniform());
    }
    p[rng.uniform_int(n)] += 1e-3;
    q[rng.uniform_int(n)] += 1e-3;
    const double sp = std::accumulate(p.begin(), p.end(), 0.0), sq = std::accumulate(q.begin(), q.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] /= sp;
      q[i] /= sq;
    }
    worst = std::min(worst, std::sqrt(2.0 * jensen_shannon(p, q)) - total_variation(p, q));
  }
  const std::vector<double> a = {1.0, 0.0}, b = {0.0, 1.0};
  const double tv = total_variation(a, b), js = jensen_shannon(a, b), bound = std::sqrt(2.0 * js);
  const bool family = std::abs(tv - 1.0) < 1e-12 && std::abs(js - std::log(2.0)) < 1e-12 && bound >= 1.0;
  const bool ok = worst >= -1e-9 && family;
  return {"tv/jsd lemma", ok,
          "min slack " + fmt(worst) + " over 10^4 pairs; disjoint pair TV=" + fmt(tv) + " JSD=" + fmt(js) +
              " sqrt(2 JSD)=" + fmt(bound),
          seconds_since(t0)};
}

CheckResult check_best_of_k(bool quick) {
  const auto t0 = Clock::now();
  const int trials = quick ? 10000 : 100000;
  bool ok = true;
  double worst = INFINITY;
  std::string worst_cell;
  for (double mu : {0.1, 0.3, 0.5}) {
    for (int k : {1, 3, 5, 10}) {
      for (double eta : {0.0, 0.05, 0.1}) {
        VerifierSpec spec;
        spec.eta_v = eta;
        Rng rng(hash_keys({0xB0F, static_cast<std::uint64_t>(mu * 100), static_cast<std::uint64_t>(k),
                           static_cast<std::uint64_t>(eta * 100)}));
        std::vector<double> scores(static_cast<std::size_t>(k));
        std::vector<char> good(static_cast<std::size_t>(k));
        int hits = 0;
        for (int t = 0; t < trials; ++t) {
          for (std::size_t i = 0; i < scores.size(); ++i) {
            good[i] = rng.bernoulli(mu);
            scores[i] = Verifier::draw(spec, good[i] != 0, rng);
          }
          hits += good[argmax_lowest(scores)];
        }
        const double p = static_cast<double>(hits) / trials;
        const double sigma = std::sqrt(std::max(p * (1.0 - p), 1e-12) / trials);
        const double bound = 1.0 - std::pow(1.0 - mu, k) - k * (k - 1) * eta / 2.0;
        const double slack = p - (bound - 3.0 * sigma);
        ok = ok && slack >= 0.0;
        if (slack < worst) {
          worst = slack;
          worst_cell = "mu=" + fmt(mu) + " K=" + std::to_string(k) + " eta=" + fmt(eta);
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  ok = ok && secs <= 60.0;
  return {"best-of-K bound", ok,
          "36 cells x " + std::to_string(trials) + " trials, tightest " + worst_cell + " slack " + fmt(worst) + ", " +
              fmt(secs) + " s",
          secs};
}

CheckResult check_noisy_dpo() {
  const auto t0 = Clock::now();
  EnvConfig env_cfg;
  env_cfg.task_count = 1;
  const Environment env(env_cfg);
  const Context x = env.reset(0, PerturbationSeed{1}).second;

  bool ok = true;
  std::ostringstream detail;
  for (double eta : {0.05, 0.1, 0.2, 0.3, 0.4}) {
    for (int y : {1, -1}) {
      SoftmaxPolicy bc(env_cfg);
      bc.set_stage(PolicyStage::BehaviorCloned);
      // true preference is action 0 over 1 when y = +1
      const ActionId a = y > 0 ? 0 : 1, b = y > 0 ? 1 : 0;
      std::vector<PreferencePair> pairs;
      const int total = 100, flipped = static_cast<int>(std::lround(eta * total));
      for (int i = 0; i < total; ++i) {
        PreferencePair p;
        p.context = x;
        p.a_plus = i < flipped ? b : a;
        p.a_minus = i < flipped ? a : b;
        p.generator_hash = bc.hash();
        pairs.push_back(std::move(p));
      }
      DistillConfig cfg;
      cfg.lambda_cons = 0.0;
      cfg.epochs = 400;
      const DistillResult res = train_recovery(bc, pairs, {}, cfg);
      PreferencePair truth;
      truth.context = x;
      truth.a_plus = 0;
      truth.a_minus = 1;
      const double u = dpo_margin(res.policy, bc, truth, cfg.beta);
      const double target = y * std::log((1.0 - eta) / eta);
      const bool good = (u > 0) == (y > 0) && std::abs(u - target) <= 1e-2;
      ok = ok && good;
      if (y > 0) detail << "eta=" << fmt(eta) << " u*=" << fmt(u) << " (" << fmt(target) << ")" << "; ";
      else if (!good) detail << "eta=" << fmt(eta) << " y=-1 u*=" << fmt(u) << " MISSED; ";
    }
  }
  return {"noisy DPO sign consistency", ok, detail.str(), seconds_since(t0)};
}

TransferCheck consistency_transfer(const RunConfig& cfg, int seeds_per_task) {
  const World w(cfg);
  const auto pool = collect_stage(cfg, w);
  const BCResult bc = train_bc_stage(cfg, pool);
  const auto built = build_pairs_stage(cfg, w, bc.policy, pool);

  RunConfig with = cfg, without = cfg;
  with.distill.lambda_cons = 0.2;
  without.distill.lambda_cons = 0.0;
  const DistillResult reg = distill_stage(with, bc.policy, built.pairs, built.consistency);
  const DistillResult plain = distill_stage(without, bc.policy, built.pairs, built.consistency);

  TransferCheck out;
  double jsd_reg = 0.0, jsd_plain = 0.0;
  const int horizon = cfg.env.horizon;
  for (TaskId task : w.split.test) {
    // scripted optimal trajectory of the task
    auto [s, ctx] = w.env.reset(task, PerturbationSeed{0});
    std::vector<ActionId> actions;
    for (int t = 0; t < horizon; ++t) {
      const ActionId a = w.env.optimal_action(s);
      actions.push_back(a);
      const StepOutcome o = w.env.step(s, a, PerturbationSeed{0}, t);
      if (o.terminal) break;
      s = o.state;
    }
    for (int i = 0; i < seeds_per_task; ++i) {
      const PerturbationSeed z = episode_seed(seed_purpose::kEvaluation, task, static_cast<std::uint64_t>(2 * i));
      const PerturbationSeed zp = episode_seed(seed_purpose::kEvaluation, task, static_cast<std::uint64_t>(2 * i + 1));
      const auto views = paired_trajectory(w.env, task, actions, z, zp);
      const TransferAudit a = audit_transfer(reg.policy, views);
      const TransferAudit b = audit_transfer(plain.policy, views);
      const double bound = horizon * std::sqrt(2.0 * a.mean_jsd) + 1e-6;
      const double gap = std::abs(a.risk_a - a.risk_b);
      out.min_slack = std::min(out.min_slack, bound - gap);
      if (gap > bound) ++out.violations;
      jsd_reg += a.mean_jsd;
      jsd_plain += b.mean_jsd;
      ++out.pairs;
    }
  }
  out.mean_jsd_reg = jsd_reg / static_cast<double>(out.pairs);
  out.mean_jsd_plain = jsd_plain / static_cast<double>(out.pairs);
  return out;
}

CheckResult check_consistency_transfer(bool quick) {
  const auto t0 = Clock::now();
  const TransferCheck t = consistency_transfer(RunConfig{}, quick ? 4 : 20);
  const bool ok = t.violations == 0 && t.mean_jsd_reg < t.mean_jsd_plain;
  return {"consistency transfer", ok,
          std::to_string(t.pairs) + " test seed pairs, " + std::to_string(t.violations) + " violations, min slack " +
              fmt(t.min_slack) + "; mean JSD lambda=0.2 " + fmt(t.mean_jsd_reg) + " vs lambda=0 " +
              fmt(t.mean_jsd_plain),
          seconds_since(t0)};
}

namespace {

// Random contexts from short rollouts of a scripted agent that sometimes
// deviates, so features cover more than the optimal path.
std::vector<Context> random_contexts(const Environment& env, int n, Rng& rng) {
  std::vector<Context> out;
  while (static_cast<int>(out.size()) < n) {
    const TaskId task = static_cast<TaskId>(rng.uniform_int(env.config().task_count));
    const PerturbationSeed z{rng.next_u64()};
    auto [s, ctx] = env.reset(task, z);
    out.push_back(ctx);
    for (int t = 0; t < env.config().horizon && static_cast<int>(out.size()) < n; ++t) {
      const ActionId a = rng.bernoulli(0.3) ? static_cast<ActionId>(rng.uniform_int(env.config().action_count))
                                            : env.optimal_action(s);
      const StepOutcome o = env.step(s, a, z, t);
      if (o.terminal || t + 1 >= env.config().horizon) break;
      s = o.state;
      ctx.observations.push_back(o.observation);
      ctx.actions.push_back(a);
      ctx.step_index = t + 1;
      out.push_back(ctx);
    }
  }
  return out;
}

}  // namespace

GradientReport gradient_errors(int points, std::uint64_t key) {
  GradientReport rep;
  EnvConfig env_cfg;
  env_cfg.task_count = 8;
  env_cfg.family_intensities = {0.2, 0.3, 0.2, 0.3};
  const Environment env(env_cfg);
  Rng rng(key);
  const auto contexts = random_contexts(env, 40, rng);
  const SoftmaxPolicy shape(env_cfg);
  const std::size_t np = shape.params().size();

  std::vector<BCExample> bc_data;
  for (const Context& x : contexts) bc_data.push_back({shape.features(x), static_cast<ActionId>(rng.uniform_int(6))});

  auto random_params = [&](double scale) {
    std::vector<double> p(np);
    for (double& v : p) v = scale * rng.normal();
    return p;
  };

  for (int point = 0; point < points; ++point) {
    // BC
    {
      const auto theta = random_params(0.5);
      std::vector<double> g(np);
      bc_loss(shape, theta, bc_data, g);
      const auto fd = central_difference(
          [&](std::span<const double> p) { return bc_loss(shape, p, bc_data, {}); }, theta, all_coords(np), 1e-6);
      rep.bc = std::max(rep.bc, norm_relative_error(g, fd));
    }
    // DPO and consistency share one objective instance
    {
      SoftmaxPolicy ref(env_cfg);
      ref.set_params(random_params(0.3));
      ref.set_stage(PolicyStage::BehaviorCloned);
      const FrozenReference frozen(ref);
      std::vector<PreferencePair> pairs;
      for (std::size_t i = 0; i + 1 < contexts.size(); i += 2) {
        PreferencePair p;
        p.context = contexts[i];
        p.a_plus = static_cast<ActionId>(rng.uniform_int(6));
        p.a_minus = static_cast<ActionId>((p.a_plus + 1 + rng.uniform_int(5)) % 6);
        p.generator_hash = ref.hash();
        pairs.push_back(std::move(p));
      }
      std::vector<ConsistencyPair> cons;
      for (std::size_t i = 0; i + 1 < contexts.size(); i += 2) cons.push_back({contexts[i], contexts[i + 1], 0});
      const RecoveryObjective obj(shape, frozen, pairs, cons, 0.1, 0.2);
      const auto theta = random_params(0.5);
      std::vector<double> g(np);
      obj.dpo(theta, g);
      auto fd = central_difference([&](std::span<const double> p) { return obj.dpo(p, {}); }, theta,
                                   all_coords(np), 1e-6);
      rep.dpo = std::max(rep.dpo, norm_relative_error(g, fd));
      std::fill(g.begin(), g.end(), 0.0);
      obj.consistency(theta, g);
      fd = central_difference([&](std::span<const double> p) { return obj.consistency(p, {}); }, theta,
                              all_coords(np), 1e-6);
      rep.consistency = std::max(rep.consistency, norm_relative_error(g, fd));
    }
    // router: full Lagrangian through the train-mode forward
    {
      RouterNet net;
      net.initialize(rng);
      auto& params = net.mutable_params();
      for (double& v : params) v += 0.05 * rng.normal();
      const Eigen::Index n = 96;
      RouterNet::Batch x(RouterNet::kInput, n);
      for (Eigen::Index j = 0; j < n; ++j)
        for (int i = 0; i < RouterNet::kInput; ++i) x(i, j) = rng.normal();
      std::vector<int> labels(static_cast<std::size_t>(n));
      std::vector<std::uint64_t> ids(static_cast<std::size_t>(n));
      for (std::size_t j = 0; j < labels.size(); ++j) {
        labels[j] = rng.bernoulli(0.4) ? 1 : 0;
        ids[j] = j % 12;
      }
      TrainSpec spec;
      const double lambda = rng.uniform(0.1, 3.0), temp = rng.uniform(0.5, 2.0);
      const std::uint64_t mask = rng.next_u64();
      RouterNet::TrainPass pass;
      const auto z = net.forward_train(x, mask, pass);
      const BatchObjective bo = lagrangian(z, temp, labels, ids, lambda, spec);
      ParamVector g;
      net.backward(pass, bo.dlogit, g);

      // every block gets sampled; the full vector is too long for FD
      std::vector<std::size_t> coords;
      for (int c = 0; c < 300; ++c) coords.push_back(rng.uniform_int(params.size()));
      for (std::size_t c = params.size() - 65; c < params.size(); ++c) coords.push_back(c);
      const std::vector<double> base(params.begin(), params.end());
      const auto fd = central_difference(
          [&](std::span<const double> p) {
            RouterNet probe = net;
            probe.mutable_params().assign(p.begin(), p.end());
            RouterNet::TrainPass tp;
            return lagrangian(probe.forward_train(x, mask, tp), temp, labels, ids, lambda, spec).loss;
          },
          base, coords, 1e-6);
      std::vector<double> ga;
      for (std::size_t c : coords) ga.push_back(g[c]);
      rep.router = std::max(rep.router, norm_relative_error(ga, fd));
    }
  }
  return rep;
}

CheckResult check_gradients() {
  const auto t0 = Clock::now();
  const GradientReport g = gradient_errors(20, 0x6AD);
  const double tol = 1e-5;
  const bool ok = g.bc <= tol && g.dpo <= tol && g.consistency <= tol && g.router <= tol;
  return {"gradient checks", ok,
          "max rel err over 20 points: bc " + fmt(g.bc) + ", dpo " + fmt(g.dpo) + ", consistency " +
              fmt(g.consistency) + ", router " + fmt(g.router),
          seconds_since(t0)};
}

std::vector<CheckResult> run_theory_suite(bool quick) {
  std::vector<CheckResult> out;
  PlantedCalibration planted;
  out.push_back(check_calibration_recovery(quick, &planted));
  out.push_back(check_threshold_optimality());
  out.push_back(check_regret_bound(&planted.net));
  out.push_back(check_tv_jsd());
  out.push_back(check_best_of_k(quick));
  out.push_back(check_noisy_dpo());
  out.push_back(check_consistency_transfer(quick));
  out.push_back(check_gradients());
  return out;
}

}  // namespace riskroute

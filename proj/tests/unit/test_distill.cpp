#include <doctest.h>

#include <cmath>

#include "riskroute/distill.hpp"
#include "riskroute/env.hpp"
#include "riskroute/policy.hpp"
#include "riskroute/verifier.hpp"

using namespace riskroute;

namespace {

struct Fixture {
  EnvConfig cfg;
  Environment env;
  TeacherPolicy teacher;
  std::vector<PerturbedEpisode> pool;
  SoftmaxPolicy bc;

  static EnvConfig make_cfg() {
    EnvConfig c;
    c.task_count = 12;
    c.family_intensities = {0.2, 0.2, 0.2, 0.2};
    return c;
  }

  Fixture()
      : cfg(make_cfg()),
        env(cfg),
        teacher(env, 0.05),
        pool(collect_teacher_trajectories(env, teacher, env.task_ids(), 2, 3)),
        bc(train_bc(cfg, pool, {60, 1.0}).policy) {}
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

std::vector<PreferencePair> noisy_pairs(const SoftmaxPolicy& ref, const Context& x, int total, int flipped) {
  std::vector<PreferencePair> pairs;
  for (int i = 0; i < total; ++i) {
    PreferencePair p;
    p.context = x;
    p.a_plus = i < flipped ? 1 : 0;
    p.a_minus = i < flipped ? 0 : 1;
    p.generator_hash = ref.hash();
    pairs.push_back(p);
  }
  return pairs;
}

}  // namespace

TEST_CASE("dpo loss at zero margin is log 2") {
  const auto& f = fixture();
  const FrozenReference ref(f.bc);
  PreferencePair p;
  p.context = f.pool[0].steps[0].context;
  p.a_plus = 0;
  p.a_minus = 3;
  CHECK(dpo_loss(f.bc, ref, p, 0.1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("dpo loss vanishes for a large margin") {
  const auto& f = fixture();
  const FrozenReference ref(f.bc);
  PreferencePair p;
  p.context = f.pool[0].steps[0].context;
  p.a_plus = 0;
  p.a_minus = 3;
  SoftmaxPolicy pi = f.bc;
  auto v = std::vector<double>(pi.params().begin(), pi.params().end());
  v[pi.feature_dim() * static_cast<std::size_t>(pi.action_count())] += 2000.0;
  pi.set_params(v);
  CHECK(dpo_margin(pi, f.bc, p, 0.1) > 100.0);
  CHECK(dpo_loss(pi, ref, p, 0.1) < 1e-40);
}

TEST_CASE("jensen-shannon and total variation") {
  const std::vector<double> a = {1.0, 0.0}, b = {0.0, 1.0};
  CHECK(jensen_shannon(a, b) == doctest::Approx(std::log(2.0)));
  CHECK(total_variation(a, b) == doctest::Approx(1.0));
  CHECK(jensen_shannon(a, a) == 0.0);

  Rng rng(8);
  for (int i = 0; i < 10000; ++i) {
    const auto n = 2 + rng.uniform_int(9);
    std::vector<double> p(n), q(n);
    double sp = 0, sq = 0;
    for (std::size_t k = 0; k < n; ++k) {
      sp += p[k] = -std::log(1.0 - rng.uniform());
      sq += q[k] = -std::log(1.0 - rng.uniform());
    }
    for (std::size_t k = 0; k < n; ++k) {
      p[k] /= sp;
      q[k] /= sq;
    }
    const double js = jensen_shannon(p, q);
    CHECK(js >= 0.0);
    CHECK(js <= std::log(2.0) + 1e-12);
    CHECK(total_variation(p, q) <= std::sqrt(2.0 * js) + 1e-9);
  }
}

TEST_CASE("consistency loss of identical views is zero") {
  const auto& f = fixture();
  std::vector<ConsistencyPair> pairs;
  for (const auto& s : f.pool[1].steps) pairs.push_back({s.context, s.context, 0});
  CHECK(consistency_loss(f.bc, pairs) == 0.0);
}

TEST_CASE("build_preferences sources") {
  const auto& f = fixture();
  SUBCASE("everything above gamma is verifier ranked") {
    VerifierSpec spec;
    spec.gamma_threshold = 0.0;
    const Verifier v(f.env, spec);
    const auto built = build_preferences(f.bc, f.pool, f.env, v, &f.teacher, 5, 1);
    CHECK(built.teacher_recovered == 0);
    CHECK(built.verifier_ranked == built.pairs.size());
    CHECK(built.pairs.size() + built.skipped_identical == built.contexts);
    for (const auto& p : built.pairs) {
      CHECK(p.source == PairSource::VerifierRanked);
      CHECK(p.generator_hash == f.bc.hash());
    }
  }
  SUBCASE("everything below gamma is teacher recovered") {
    VerifierSpec spec;
    spec.gamma_threshold = 1.0;
    const Verifier v(f.env, spec);
    const auto built = build_preferences(f.bc, f.pool, f.env, v, &f.teacher, 5, 1);
    CHECK(built.verifier_ranked == 0);
    CHECK(built.teacher_recovered > 0);
    for (const auto& p : built.pairs) CHECK(p.source == PairSource::TeacherRecovered);
    const auto no_teacher = build_preferences(f.bc, f.pool, f.env, v, nullptr, 5, 1);
    CHECK(no_teacher.pairs.empty());
    CHECK(no_teacher.skipped_no_teacher == no_teacher.contexts);
  }
  SUBCASE("only the behavior-cloned policy may generate pairs") {
    const Verifier v(f.env, VerifierSpec{});
    SoftmaxPolicy init(f.cfg);
    CHECK_THROWS(build_preferences(init, f.pool, f.env, v, &f.teacher, 5, 1));
  }
}

TEST_CASE("noisy preferences converge to the log-odds margin") {
  EnvConfig c;
  c.task_count = 1;
  const Environment env(c);
  const Context x = env.reset(0, {1}).second;
  SoftmaxPolicy bc(c);
  bc.set_stage(PolicyStage::BehaviorCloned);
  DistillConfig cfg;
  cfg.lambda_cons = 0.0;
  cfg.epochs = 400;
  const auto res = train_recovery(bc, noisy_pairs(bc, x, 10, 1), {}, cfg);
  PreferencePair truth;
  truth.context = x;
  truth.a_plus = 0;
  truth.a_minus = 1;
  CHECK(std::abs(dpo_margin(res.policy, bc, truth, cfg.beta) - std::log(9.0)) < 1e-3);
  CHECK(res.reference_hash_before == res.reference_hash_after);
}

TEST_CASE("noise-free preferences grow the margin") {
  EnvConfig c;
  c.task_count = 1;
  const Environment env(c);
  const Context x = env.reset(0, {1}).second;
  SoftmaxPolicy bc(c);
  bc.set_stage(PolicyStage::BehaviorCloned);
  PreferencePair truth;
  truth.context = x;
  truth.a_plus = 0;
  truth.a_minus = 1;
  double prev = 0.0;
  for (int epochs : {1, 2, 5, 10, 20, 40}) {
    DistillConfig cfg;
    cfg.lambda_cons = 0.0;
    cfg.epochs = epochs;
    const auto res = train_recovery(bc, noisy_pairs(bc, x, 10, 0), {}, cfg);
    const double u = dpo_margin(res.policy, bc, truth, cfg.beta);
    CHECK(u > prev);
    prev = u;
  }
}

TEST_CASE("pairs from another generator are rejected") {
  EnvConfig c;
  c.task_count = 1;
  const Environment env(c);
  const Context x = env.reset(0, {1}).second;
  SoftmaxPolicy bc(c);
  bc.set_stage(PolicyStage::BehaviorCloned);
  auto pairs = noisy_pairs(bc, x, 4, 0);
  pairs[2].generator_hash ^= 1;
  CHECK_THROWS(train_recovery(bc, pairs, {}, DistillConfig{}));
}

TEST_CASE("dominant consistency weight aligns the views") {
  const auto& f = fixture();
  const Verifier v(f.env, VerifierSpec{});
  const auto built = build_preferences(f.bc, f.pool, f.env, v, &f.teacher, 5, 1);
  REQUIRE(!built.consistency.empty());
  DistillConfig cfg;
  cfg.lambda_cons = 1e3;
  cfg.epochs = 100;
  const auto res = train_recovery(f.bc, built.pairs, built.consistency, cfg);
  CHECK(consistency_loss(res.policy, built.consistency) < 0.01);
  CHECK(res.policy.stage() == PolicyStage::Distilled);
}

TEST_CASE("paired trajectories share latent states") {
  const auto& f = fixture();
  std::vector<ActionId> acts;
  for (const auto& s : f.pool[2].steps) acts.push_back(s.chosen_action);
  const auto views = paired_trajectory(f.env, f.pool[2].task_id, acts, {1}, {2});
  REQUIRE(!views.empty());
  for (std::size_t t = 0; t < views.size(); ++t) {
    CHECK(views[t].view_a.actions == views[t].view_b.actions);
    CHECK(views[t].view_a.step_index == static_cast<int>(t));
  }
  const auto audit = audit_transfer(f.bc, views);
  CHECK(audit.steps == views.size());
  CHECK(std::abs(audit.risk_a - audit.risk_b) <= audit.sum_tv + 1e-12);
}

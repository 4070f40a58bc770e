#include <doctest.h>

#include <set>

#include "riskroute/runtime.hpp"

using namespace riskroute;

namespace {

struct Rig {
  EnvConfig cfg;
  Environment env;
  SoftmaxPolicy slm;
  TeacherPolicy teacher;
  Verifier verifier;
  Agent agent;
  RouterNet net;

  static EnvConfig make_cfg() {
    EnvConfig c;
    c.task_count = 30;
    c.family_intensities = {0.2, 0.2, 0.2, 0.2};
    return c;
  }

  Rig() : cfg(make_cfg()), env(cfg), slm(cfg), teacher(env, 0.0), verifier(env, VerifierSpec{}) {
    slm.set_stage(PolicyStage::Distilled);
    agent.env = &env;
    agent.slm = &slm;
    agent.teacher = &teacher;
    agent.verifier = &verifier;
    agent.limits = feature_limits(env);
    agent.k = 3;
    agent.seed = 5;
    Rng rng(1);
    net.initialize(rng);
  }

  std::vector<EpisodeJob> jobs(int seeds = 4) const { return make_jobs(env.task_ids(), seeds, seed_purpose::kEvaluation); }
};

const Rig& rig() {
  static const Rig r;
  return r;
}

}  // namespace

TEST_CASE("variant names") {
  for (Variant v : kAllVariants) CHECK(variant_from_string(to_string(v)) == v);
  CHECK_THROWS_AS(variant_from_string("r2v"), ConfigError);
}

TEST_CASE("slm-only never calls the LLM") {
  const auto& r = rig();
  for (const auto& ep : run_episodes(r.agent, r.jobs(), RoutingPolicy::slm_only())) {
    CHECK(ep.llm_calls == 0);
    CHECK_NOTHROW(ep.check_invariants());
  }
}

TEST_CASE("llm-only escalates every step") {
  const auto& r = rig();
  for (const auto& ep : run_episodes(r.agent, r.jobs(2), RoutingPolicy::llm_only())) {
    for (const auto& s : ep.steps) CHECK(s.executor == Executor::Llm);
    CHECK(ep.success);
  }
}

TEST_CASE("budget projection hand trace") {
  const auto& r = rig();
  // tau = 0 escalates whenever budget remains
  RoutingPolicy pol = RoutingPolicy::risk_router(r.net, 0.0);
  pol.budget = 3;
  int long_episodes = 0;
  for (const auto& job : r.jobs(3)) {
    const auto ep = run_episode(r.agent, job.task, job.z, pol);
    CHECK_NOTHROW(ep.check_invariants());
    CHECK(ep.llm_calls == std::min<int>(3, static_cast<int>(ep.steps.size())));
    for (std::size_t t = 0; t < ep.steps.size(); ++t) {
      CHECK(ep.steps[t].executor == (t < 3 ? Executor::Llm : Executor::Slm));
      CHECK(ep.steps[t].budget_remaining == std::max(0, 2 - static_cast<int>(t)));
    }
    long_episodes += ep.steps.size() >= 10;
  }
  CHECK(long_episodes > 0);
}

TEST_CASE("zero budget behaves like slm-only") {
  const auto& r = rig();
  RoutingPolicy pol = RoutingPolicy::llm_only();
  pol.budget = 0;
  const auto jobs = r.jobs(2);
  const auto capped = run_episodes(r.agent, jobs, pol);
  const auto slm = run_episodes(r.agent, jobs, RoutingPolicy::slm_only());
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    CHECK(capped[i].llm_calls == 0);
    CHECK(capped[i].success == slm[i].success);
    CHECK(capped[i].steps.size() == slm[i].steps.size());
  }
}

TEST_CASE("decision rules") {
  RiskFeatures f;
  f[slot::kPolicyEntropy] = 1.0;
  CHECK(entropy_decision(f, 0.5));
  f[slot::kPolicyEntropy] = 1e-12;
  for (double tau : {0.01, 0.5, 0.99}) CHECK_FALSE(entropy_decision(f, tau));

  const std::vector<double> ones(5, 1.0), zeros(5, 0.0);
  CHECK_FALSE(heuristic_decision(ones, 0.5));
  for (double theta : {0.01, 0.5, 0.99}) CHECK(heuristic_decision(zeros, theta));
}

TEST_CASE("routing labels follow episode outcome") {
  const auto& r = rig();
  const auto col = collect_routing_dataset(r.agent, r.jobs(), 2);
  std::size_t k = 0, pos = 0;
  int successes = 0, failures = 0;
  for (const auto& ep : col.episodes) {
    (ep.success ? successes : failures) += 1;
    for (std::size_t t = 0; t < ep.steps.size(); ++t, ++k) {
      const auto& ex = col.examples[k];
      CHECK(ex.label == (ep.success ? 0 : 1));
      CHECK(ex.seed_id == seed_id(ep.task_id, ep.seed));
      CHECK(ex.step_index == static_cast<int>(t));
      CHECK(ex.features == *ep.steps[t].features);
      pos += ex.label;
    }
  }
  CHECK(k == col.examples.size());
  CHECK(successes > 0);
  CHECK(failures > 0);
  std::size_t fail_steps = 0;
  for (const auto& ep : col.episodes)
    if (!ep.success) fail_steps += ep.steps.size();
  CHECK(pos == fail_steps);

  SoftmaxPolicy bc = r.slm;
  bc.set_stage(PolicyStage::BehaviorCloned);
  Agent a = r.agent;
  a.slm = &bc;
  CHECK_THROWS(collect_routing_dataset(a, r.jobs(1)));
}

TEST_CASE("oracle") {
  const auto& r = rig();
  const auto jobs = r.jobs();
  const auto slm = run_episodes(r.agent, jobs, RoutingPolicy::slm_only());
  const HindsightTable table = build_hindsight_table(slm);
  CHECK(table.size() == jobs.size());
  const auto oracle = run_episodes(r.agent, jobs, RoutingPolicy::oracle(table));
  std::size_t routed = 0;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (slm[i].success) {
      CHECK(oracle[i].llm_calls == 0);
      CHECK(oracle[i].steps.size() == slm[i].steps.size());
      CHECK(oracle[i].success);
    } else {
      CHECK(oracle[i].llm_calls == static_cast<int>(oracle[i].steps.size()));
      ++routed;
    }
  }
  const auto examples = routing_examples(slm);
  std::set<std::uint64_t> failing;
  for (const auto& e : examples)
    if (e.label) failing.insert(e.seed_id);
  CHECK(routed == failing.size());

  CHECK_THROWS(build_hindsight_table(oracle));
  CHECK_THROWS(oracle_decision(0, {12345}, table));
}

TEST_CASE("rollouts are reproducible across worker counts") {
  const auto& r = rig();
  const auto pol = RoutingPolicy::risk_router(r.net, 0.5);
  CHECK(run_episodes(r.agent, r.jobs(2), pol, 1) == run_episodes(r.agent, r.jobs(2), pol, 3));
}

TEST_CASE("router variant records probabilities") {
  const auto& r = rig();
  const auto ep = run_episode(r.agent, 0, {9}, RoutingPolicy::risk_router(r.net, 0.5, FeatureMask::NoVerifier));
  for (const auto& s : ep.steps) {
    REQUIRE(s.router_prob.has_value());
    CHECK(*s.router_prob == r.net.predict(apply_mask(*s.features, FeatureMask::NoVerifier)));
    CHECK((s.executor == Executor::Llm) == (*s.router_prob >= 0.5));
  }
}

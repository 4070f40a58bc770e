#include <benchmark/benchmark.h>

#include "riskroute/features.hpp"
#include "riskroute/router.hpp"
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

  Rig() : env(cfg), slm(cfg), teacher(env, 0.05), verifier(env, VerifierSpec{}) {
    slm.set_stage(PolicyStage::Distilled);
    agent.env = &env;
    agent.slm = &slm;
    agent.teacher = &teacher;
    agent.verifier = &verifier;
    agent.limits = feature_limits(env);
    Rng rng(1);
    net.initialize(rng);
  }
};

const Rig& rig() {
  static const Rig r;
  return r;
}

std::vector<RiskFeatures> random_features(std::size_t n) {
  Rng rng(7);
  std::vector<RiskFeatures> out(n);
  for (auto& f : out)
    for (std::size_t i = 0; i < kFeatureDim; ++i) f[i] = rng.uniform();
  return out;
}

void BM_RouterPredict(benchmark::State& state) {
  const auto fs = random_features(1);
  for (auto _ : state) benchmark::DoNotOptimize(rig().net.predict(fs[0]));
}
BENCHMARK(BM_RouterPredict);

void BM_RouterPredictBatch(benchmark::State& state) {
  const auto fs = random_features(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(rig().net.predict(fs));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RouterPredictBatch)->Arg(64)->Arg(4096);

void BM_ExtractFeatures(benchmark::State& state) {
  const Rig& r = rig();
  Rng rng(3);
  auto [s, x] = r.env.reset(0, {1});
  const auto cands = sample_candidates(r.slm, x, static_cast<int>(state.range(0)), rng);
  const auto scores = r.verifier.score_all(s, cands, rng);
  for (auto _ : state) benchmark::DoNotOptimize(extract_features(x, r.slm, cands, scores, r.agent.limits));
}
BENCHMARK(BM_ExtractFeatures)->Arg(3)->Arg(5);

void BM_RunEpisode(benchmark::State& state) {
  const Rig& r = rig();
  const auto policy = static_cast<Variant>(state.range(0)) == Variant::RiskRouter
                          ? RoutingPolicy::risk_router(r.net, 0.5)
                          : RoutingPolicy::slm_only();
  std::uint64_t z = 0;
  for (auto _ : state) benchmark::DoNotOptimize(run_episode(r.agent, static_cast<TaskId>(z % 10), {++z}, policy));
}
BENCHMARK(BM_RunEpisode)
    ->Arg(static_cast<int>(Variant::SlmOnly))
    ->Arg(static_cast<int>(Variant::RiskRouter));

}  // namespace

BENCHMARK_MAIN();

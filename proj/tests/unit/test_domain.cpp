#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "riskroute/config.hpp"
#include "riskroute/domain.hpp"
#include "riskroute/records.hpp"
#include "riskroute/rng.hpp"

using namespace riskroute;

namespace {

std::vector<TaskId> iota_ids(TaskId n) {
  std::vector<TaskId> ids(n);
  for (TaskId i = 0; i < n; ++i) ids[i] = i;
  return ids;
}

PerturbedEpisode sample_episode() {
  PerturbedEpisode e;
  e.task_id = 4;
  e.seed = {0xDEADBEEFCAFEULL};
  e.source = "slm_only";
  const TokenSeq goal = {30, 5, 9, 31};
  std::vector<TokenSeq> obs = {{4, 16, 21, 27, 26}, {5, 0, 21, 27, 22}, {1, 1, 1}};
  for (int t = 0; t < 3; ++t) {
    StepRecord s;
    s.context.goal = goal;
    s.context.observations.assign(obs.begin(), obs.begin() + t + 1);
    for (int i = 0; i < t; ++i) s.context.actions.push_back(i % 5);
    s.context.step_index = t;
    s.candidates = {{1, -0.1053605156578263}, {2, -2.302585092994046}};
    s.verifier_scores = {0.7310585786300049, 0.1};
    s.chosen_action = t % 5;
    s.executor = t == 1 ? Executor::Llm : Executor::Slm;
    RiskFeatures f;
    for (std::size_t i = 0; i < kFeatureDim; ++i) f[i] = 1.0 / (3.0 + static_cast<double>(i + t));
    s.features = f;
    s.router_prob = 0.1 + 0.2 * t;
    s.budget_remaining = 2 - (t >= 1);
    e.steps.push_back(s);
  }
  e.llm_calls = 1;
  e.budget_limit = 2;
  e.success = true;
  return e;
}

}  // namespace

TEST_CASE("derive_splits 100 tasks gives 70/15/15") {
  const auto s = derive_splits(iota_ids(100), {0.70, 0.15, 0.15}, 42);
  CHECK(s.train.size() == 70);
  CHECK(s.valid.size() == 15);
  CHECK(s.test.size() == 15);
  std::set<TaskId> all(s.train.begin(), s.train.end());
  all.insert(s.valid.begin(), s.valid.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 100);
}

TEST_CASE("derive_splits minimal split") {
  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
    const auto s = derive_splits(iota_ids(3), {0.34, 0.33, 0.33}, seed);
    CHECK(s.train.size() == 1);
    CHECK(s.valid.size() == 1);
    CHECK(s.test.size() == 1);
  }
}

TEST_CASE("derive_splits is invariant to input order") {
  const auto ids = iota_ids(57);
  const auto ref = derive_splits(ids, {0.70, 0.15, 0.15}, 42);
  Rng rng(5);
  for (int k = 0; k < 10; ++k) {
    auto p = ids;
    shuffle(p.begin(), p.end(), rng);
    CHECK(derive_splits(p, {0.70, 0.15, 0.15}, 42) == ref);
  }
  CHECK_FALSE(derive_splits(ids, {0.70, 0.15, 0.15}, 43) == ref);
}

TEST_CASE("derive_splits rejects bad input") {
  CHECK_THROWS_AS(derive_splits(iota_ids(2), {0.70, 0.15, 0.15}, 42), ConfigError);
  CHECK_THROWS_AS(derive_splits(iota_ids(10), {0.70, 0.15, 0.10}, 42), ConfigError);
}

TEST_CASE("episode invariants") {
  auto e = sample_episode();
  CHECK_NOTHROW(e.check_invariants());
  CHECK(e.recount_llm_calls() == 1);
  e.llm_calls = 2;
  CHECK_THROWS_AS(e.check_invariants(), std::logic_error);
  e = sample_episode();
  e.steps[0].verifier_scores[0] = 1.5;
  CHECK_THROWS_AS(e.check_invariants(), std::logic_error);
  e = sample_episode();
  e.budget_limit = 0;
  CHECK_THROWS_AS(e.check_invariants(), std::logic_error);
}

TEST_CASE("episode round trip is bit exact") {
  const auto e = sample_episode();
  const auto back = deserialize_episode(serialize_episode(e));
  CHECK(back == e);
  CHECK(serialize_episode(back) == serialize_episode(e));
}

TEST_CASE("empty episode round trips") {
  PerturbedEpisode e;
  e.task_id = 9;
  e.success = true;
  const auto back = deserialize_episode(serialize_episode(e));
  CHECK(back == e);
  CHECK(back.success);
  CHECK_FALSE(back.budget_limit.has_value());
}

TEST_CASE("truncated episode record raises ParseError") {
  const std::string rec = serialize_episode(sample_episode());
  for (std::size_t cut : {std::size_t{1}, rec.size() / 3, rec.size() - 1}) {
    try {
      (void)deserialize_episode(std::string_view(rec).substr(0, cut));
      FAIL("no error for cut at " << cut);
    } catch (const ParseError& e) {
      CHECK(e.offset() <= cut);
    }
  }
}

TEST_CASE("wrong schema tag is rejected") {
  std::string rec = serialize_episode(sample_episode());
  const auto at = rec.find("episode/v1");
  REQUIRE(at != std::string::npos);
  rec.replace(at, 10, "episode/v9");
  CHECK_THROWS_AS(deserialize_episode(rec), ParseError);
}

TEST_CASE("routing example round trip") {
  RoutingExample ex;
  for (std::size_t i = 0; i < kFeatureDim; ++i) ex.features[i] = std::sqrt(static_cast<double>(i) + 0.1);
  ex.label = 1;
  ex.seed_id = 0xFFFFFFFFFFFFFFF0ULL;
  ex.step_index = 7;
  CHECK(deserialize_routing_example(serialize_routing_example(ex)) == ex);
}

TEST_CASE("record files carry a header and absolute error offsets") {
  const auto dir = std::filesystem::temp_directory_path() / "riskroute_records_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "episodes.rljson";
  const std::vector<PerturbedEpisode> eps = {sample_episode(), sample_episode()};
  write_episodes(path, {"collect", "abc", json::object()}, eps);
  ArtifactHeader h;
  CHECK(read_episodes(path, &h) == eps);
  CHECK(h.stage == "collect");
  CHECK(h.config_hash == "abc");

  const RecordFile file = read_record_file(path);
  REQUIRE(file.records.size() == 2);
  std::string text;
  {
    std::ifstream in(path);
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  const std::size_t second = file.offsets[1];
  CHECK(text.compare(second, file.records[1].size(), file.records[1]) == 0);
  text.resize(second + 20);
  text += "\n";
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
  }
  try {
    (void)read_episodes(path);
    FAIL("truncated file parsed");
  } catch (const ParseError& e) {
    CHECK(e.offset() >= second);
    CHECK(e.offset() <= second + 20);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("config defaults round trip and hash is stable") {
  const RunConfig c;
  const json j = config_to_json(c);
  const RunConfig back = config_from_json(j);
  CHECK(config_to_json(back) == j);
  CHECK(config_hash(back) == config_hash(c));
  RunConfig d = c;
  d.router.train.cvar.epsilon = 0.15;
  CHECK(config_hash(d) != config_hash(c));
}

TEST_CASE("config rejects unknown keys and bad values") {
  CHECK_THROWS_AS(config_from_json(json{{"router", {{"lrr", 0.1}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"nonsense", json::object()}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"router", {{"cvar", {{"alpha", 0.0}}}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"router", {{"threshold_mode", "argmax"}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"env", {{"horizon", 1}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"router", {{"costs", {{"kappa", 0.0}}}}}}), ConfigError);
}

TEST_CASE("environment overrides") {
  json j = json::object();
  apply_env_overrides(j, {{"RISKROUTE__router__cvar__epsilon", "0.15"},
                          {"RISKROUTE__router__threshold_mode", "sweep"},
                          {"UNRELATED", "1"}});
  const RunConfig c = config_from_json(j);
  CHECK(c.router.train.cvar.epsilon == doctest::Approx(0.15));
  CHECK(c.router.threshold_mode == ThresholdMode::Sweep);
  json bad = json::object();
  CHECK_THROWS_AS(apply_env_overrides(bad, {{"RISKROUTE__router____x", "1"}}), ConfigError);
}

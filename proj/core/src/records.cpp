#include "riskroute/records.hpp"

#include <sstream>

namespace riskroute {
namespace {

json features_to_json(const RiskFeatures& f) { return json(f.values); }

RiskFeatures features_from_json(const json& j) {
  if (!j.is_array() || j.size() != kFeatureDim)
    throw std::invalid_argument("feature vector must have 15 entries");
  RiskFeatures f;
  for (std::size_t i = 0; i < kFeatureDim; ++i) f[i] = j.at(i).get<double>();
  return f;
}

template <class Fn>
auto parse_record(std::string_view record, std::string_view schema, Fn&& build) {
  json j;
  try {
    j = json::parse(record.begin(), record.end());
  } catch (const json::parse_error& e) {
    throw ParseError(json_error_offset(e), e.what());
  }
  try {
    if (!j.is_object()) throw std::invalid_argument("record is not an object");
    if (j.at("schema").get<std::string>() != schema)
      throw std::invalid_argument("unexpected schema tag " + j.at("schema").dump());
    return build(j);
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    // Structural errors are detected once the whole record has been read.
    throw ParseError(record.size(), e.what());
  }
}

}  // namespace

std::string serialize_episode(const PerturbedEpisode& e) {
  e.check_invariants();
  json j;
  j["schema"] = kEpisodeSchema;
  j["task_id"] = e.task_id;
  j["z"] = e.seed.z;
  j["source"] = e.source;
  j["success"] = e.success;
  j["llm_calls"] = e.llm_calls;
  j["budget_limit"] = e.budget_limit ? json(*e.budget_limit) : json(nullptr);

  // Contexts are prefix-consistent, so the goal and observation stream are
  // stored once and per-step contexts are rebuilt on load.
  json observations = json::array();
  json steps = json::array();
  json goal = json::array();
  if (!e.steps.empty()) goal = e.steps.front().context.goal;
  for (std::size_t t = 0; t < e.steps.size(); ++t) {
    const StepRecord& s = e.steps[t];
    if (s.context.goal != e.steps.front().context.goal ||
        s.context.observations.size() != t + 1 || s.context.actions.size() != t)
      throw std::logic_error("episode contexts are not prefix-consistent");
    for (std::size_t i = 0; i < t; ++i) {
      if (s.context.actions[i] != e.steps[i].chosen_action ||
          s.context.observations[i] != e.steps[i].context.observations[i])
        throw std::logic_error("episode contexts are not prefix-consistent");
    }
    observations.push_back(s.context.observations.back());
    json js;
    js["a"] = s.chosen_action;
    js["x"] = s.executor == Executor::Llm ? 1 : 0;
    json cands = json::array();
    for (const Candidate& c : s.candidates) cands.push_back(json::array({c.action, c.log_prob}));
    js["c"] = std::move(cands);
    js["s"] = s.verifier_scores;
    if (s.features) js["f"] = features_to_json(*s.features);
    if (s.router_prob) js["p"] = *s.router_prob;
    if (s.budget_remaining) js["b"] = *s.budget_remaining;
    steps.push_back(std::move(js));
  }
  j["goal"] = std::move(goal);
  j["obs"] = std::move(observations);
  j["steps"] = std::move(steps);
  return j.dump();
}

PerturbedEpisode deserialize_episode(std::string_view record) {
  return parse_record(record, kEpisodeSchema, [](const json& j) {
    PerturbedEpisode e;
    e.task_id = j.at("task_id").get<TaskId>();
    e.seed.z = j.at("z").get<std::uint64_t>();
    e.source = j.at("source").get<std::string>();
    e.success = j.at("success").get<bool>();
    e.llm_calls = j.at("llm_calls").get<int>();
    if (!j.at("budget_limit").is_null()) e.budget_limit = j.at("budget_limit").get<int>();
    const auto goal = j.at("goal").get<TokenSeq>();
    const auto obs = j.at("obs").get<std::vector<TokenSeq>>();
    const json& steps = j.at("steps");
    if (obs.size() != steps.size())
      throw std::invalid_argument("observation count does not match step count");
    Context ctx;
    ctx.goal = goal;
    for (std::size_t t = 0; t < steps.size(); ++t) {
      const json& js = steps[t];
      StepRecord s;
      ctx.step_index = static_cast<int>(t);
      ctx.observations.push_back(obs[t]);
      s.context = ctx;
      s.chosen_action = js.at("a").get<ActionId>();
      const int x = js.at("x").get<int>();
      if (x != 0 && x != 1) throw std::invalid_argument("executor must be 0 or 1");
      s.executor = x == 1 ? Executor::Llm : Executor::Slm;
      for (const json& c : js.at("c")) {
        if (!c.is_array() || c.size() != 2) throw std::invalid_argument("candidate must be a pair");
        s.candidates.push_back({c[0].get<ActionId>(), c[1].get<double>()});
      }
      s.verifier_scores = js.at("s").get<std::vector<double>>();
      if (js.contains("f")) s.features = features_from_json(js["f"]);
      if (js.contains("p")) s.router_prob = js["p"].get<double>();
      if (js.contains("b")) s.budget_remaining = js["b"].get<int>();
      ctx.actions.push_back(s.chosen_action);
      e.steps.push_back(std::move(s));
    }
    try {
      e.check_invariants();
    } catch (const std::logic_error& err) {
      throw std::invalid_argument(err.what());
    }
    return e;
  });
}

std::string serialize_routing_example(const RoutingExample& r) {
  if (r.label != 0 && r.label != 1) throw std::logic_error("routing label must be 0 or 1");
  json j;
  j["schema"] = kRoutingSchema;
  j["f"] = features_to_json(r.features);
  j["y"] = r.label;
  j["seed_id"] = r.seed_id;
  j["t"] = r.step_index;
  return j.dump();
}

RoutingExample deserialize_routing_example(std::string_view record) {
  return parse_record(record, kRoutingSchema, [](const json& j) {
    RoutingExample r;
    r.features = features_from_json(j.at("f"));
    r.label = j.at("y").get<int>();
    if (r.label != 0 && r.label != 1) throw std::invalid_argument("label must be 0 or 1");
    r.seed_id = j.at("seed_id").get<std::uint64_t>();
    r.step_index = j.at("t").get<int>();
    return r;
  });
}

json split_to_json(const DatasetSplit& s) {
  return json{{"schema", "riskroute.split/v1"}, {"fractions", s.fractions}, {"seed", s.seed},
              {"train", s.train},           {"valid", s.valid},         {"test", s.test}};
}

DatasetSplit split_from_json(const json& j) {
  DatasetSplit s;
  s.fractions = j.at("fractions").get<std::array<double, 3>>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.train = j.at("train").get<std::vector<TaskId>>();
  s.valid = j.at("valid").get<std::vector<TaskId>>();
  s.test = j.at("test").get<std::vector<TaskId>>();
  return s;
}

json header_to_json(const ArtifactHeader& h) {
  return json{{"schema", kHeaderSchema}, {"stage", h.stage}, {"config_hash", h.config_hash},
              {"extra", h.extra}};
}

ArtifactHeader header_from_json(const json& j) {
  ArtifactHeader h;
  h.stage = j.at("stage").get<std::string>();
  h.config_hash = j.at("config_hash").get<std::string>();
  if (j.contains("extra")) h.extra = j.at("extra");
  return h;
}

RecordWriter::RecordWriter(const std::filesystem::path& path, const ArtifactHeader& header)
    : out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out_ << header_to_json(header).dump() << '\n';
}

void RecordWriter::write(std::string_view record) { out_ << record << '\n'; }

RecordFile read_record_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  RecordFile file;
  std::string line;
  std::size_t offset = 0;
  bool first = true;
  while (std::getline(in, line)) {
    const std::size_t start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    if (first) {
      first = false;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ParseError(start + json_error_offset(e), path.string() + ": " + e.what());
      }
      if (j.is_object() && j.value("schema", "") == kHeaderSchema) {
        file.header = header_from_json(j);
        continue;
      }
    }
    file.records.push_back(std::move(line));
    file.offsets.push_back(start);
  }
  return file;
}

namespace {

template <class T, class Fn>
std::vector<T> parse_all(const std::filesystem::path& path, ArtifactHeader* header_out, Fn&& fn) {
  RecordFile file = read_record_file(path);
  if (header_out && file.header) *header_out = *file.header;
  std::vector<T> out;
  out.reserve(file.records.size());
  for (std::size_t i = 0; i < file.records.size(); ++i) {
    try {
      out.push_back(fn(file.records[i]));
    } catch (const ParseError& e) {
      throw ParseError(file.offsets[i] + e.offset(), path.string() + " record " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

void write_episodes(const std::filesystem::path& path, const ArtifactHeader& header,
                    const std::vector<PerturbedEpisode>& episodes) {
  RecordWriter w(path, header);
  for (const auto& e : episodes) w.write(serialize_episode(e));
}

std::vector<PerturbedEpisode> read_episodes(const std::filesystem::path& path,
                                            ArtifactHeader* header_out) {
  return parse_all<PerturbedEpisode>(path, header_out,
                                     [](const std::string& r) { return deserialize_episode(r); });
}

void write_routing_examples(const std::filesystem::path& path, const ArtifactHeader& header,
                            const std::vector<RoutingExample>& examples) {
  RecordWriter w(path, header);
  for (const auto& r : examples) w.write(serialize_routing_example(r));
}

std::vector<RoutingExample> read_routing_examples(const std::filesystem::path& path,
                                                  ArtifactHeader* header_out) {
  return parse_all<RoutingExample>(path, header_out, [](const std::string& r) {
    return deserialize_routing_example(r);
  });
}

}  // namespace riskroute

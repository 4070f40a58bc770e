#include "riskroute/config.hpp"

#include <cstdlib>
#include <fstream>
#include <algorithm>
#include <set>
#include <sstream>

extern char** environ;

namespace riskroute {
namespace {

class Block {
 public:
  Block(json j, std::string name) : j_(std::move(j)), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config block '" + name_ + "' must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key " + name_ + "." + key + " has the wrong type");
    }
  }

  static Block top(const json& root, const std::string& key) {
    return Block(root.contains(key) ? root.at(key) : json::object(), key);
  }

  Block sub(const std::string& key) {
    seen_.insert(key);
    return Block(j_.contains(key) ? j_.at(key) : json::object(), name_ + "." + key);
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key " + name_ + "." + k);
  }

 private:
  json j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace

void RunConfig::validate() const {
  env.validate();
  derive_splits({0, 1, 2}, split_fractions, split_seed);
  if (!(policy.teacher_error_rate >= 0.0 && policy.teacher_error_rate < 1.0))
    throw ConfigError("policy.teacher_error_rate must be in [0,1)");
  if (policy.teacher_seeds_per_task < 0) throw ConfigError("policy.teacher_seeds_per_task must be nonnegative");
  if (policy.bc_epochs < 0) throw ConfigError("policy.bc_epochs must be nonnegative");
  verifier.validate();
  distill.validate();
  router.train.validate();
  if (router.routing_seeds_per_task < 1) throw ConfigError("router.routing_seeds_per_task must be positive");
  if (runtime.k < 2) throw ConfigError("runtime.k must be >= 2");
  if (runtime.budget && *runtime.budget < 0) throw ConfigError("runtime.budget must be nonnegative");
  if (eval.seeds_per_task < 1) throw ConfigError("eval.seeds_per_task must be positive");
  if (eval.bootstrap_resamples < 1) throw ConfigError("eval.bootstrap_resamples must be positive");
  if (!(eval.ci_level > 0.0 && eval.ci_level < 1.0)) throw ConfigError("eval.ci_level must be in (0,1)");
}

RunConfig config_from_json(const json& root) {
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  for (const auto& [k, v] : root.items()) {
    static const std::set<std::string> blocks = {"env",    "policy", "verifier", "distill",
                                                 "features", "router", "runtime", "eval"};
    if (!blocks.count(k)) throw ConfigError("unknown config block '" + k + "'");
  }

  Block env = Block::top(root, "env");
  env.get("state_count", c.env.state_count);
  env.get("action_count", c.env.action_count);
  env.get("horizon", c.env.horizon);
  env.get("goal_vocab_size", c.env.goal_vocab_size);
  env.get("task_count", c.env.task_count);
  env.get("max_subgoals", c.env.max_subgoals);
  env.get("min_slack", c.env.min_slack);
  env.get("hazard_density", c.env.hazard_density);
  env.get("reward_success", c.env.reward_success);
  env.get("discount", c.env.discount);
  env.get("rng_seed", c.env.rng_seed);
  {
    Block fam = env.sub("families");
    for (Family f : kAllFamilies) {
      Block one = fam.sub(std::string(to_string(f)));
      const auto i = static_cast<std::size_t>(f);
      one.get("enabled", c.env.families_enabled[i]);
      one.get("intensity", c.env.family_intensities[i]);
      one.finish();
    }
    fam.finish();
  }
  {
    Block split = env.sub("split");
    split.get("fractions", c.split_fractions);
    split.get("seed", c.split_seed);
    split.finish();
  }
  env.finish();

  Block pol = Block::top(root, "policy");
  pol.get("teacher_error_rate", c.policy.teacher_error_rate);
  pol.get("teacher_seeds_per_task", c.policy.teacher_seeds_per_task);
  pol.get("bc_epochs", c.policy.bc_epochs);
  pol.get("bc_learning_rate", c.policy.bc_learning_rate);
  pol.get("seed", c.policy.seed);
  pol.finish();

  Block ver = Block::top(root, "verifier");
  ver.get("regime", c.verifier_regime);
  if (!c.verifier_regime.empty()) {
    const VerifierSpec r = VerifierSpec::from_regime(c.verifier_regime);
    c.verifier.eta_v = r.eta_v;
    if (ver.has("eta_v")) {
      double eta = 0.0;
      ver.get("eta_v", eta);
      if (eta != r.eta_v) throw ConfigError("verifier.eta_v conflicts with verifier.regime");
    }
  }
  ver.get("eta_v", c.verifier.eta_v);
  ver.get("gamma_threshold", c.verifier.gamma_threshold);
  ver.finish();

  Block dis = Block::top(root, "distill");
  dis.get("beta", c.distill.beta);
  dis.get("lambda_cons", c.distill.lambda_cons);
  dis.get("candidates", c.distill.candidates);
  dis.get("epochs", c.distill.epochs);
  dis.get("learning_rate", c.distill.learning_rate);
  dis.get("seed", c.distill_seed);
  dis.finish();

  Block feat = Block::top(root, "features");
  std::string mask = std::string(to_string(c.mask));
  feat.get("mask", mask);
  c.mask = mask_from_string(mask);
  feat.finish();

  Block rt = Block::top(root, "router");
  TrainSpec& ts = c.router.train;
  rt.get("lr", ts.lr);
  rt.get("weight_decay", ts.weight_decay);
  rt.get("dual_lr", ts.dual_lr);
  rt.get("epochs", ts.epochs);
  rt.get("batch_steps", ts.batch_steps);
  rt.get("dropout", ts.dropout);
  rt.get("seed", ts.seed);
  rt.get("routing_seeds_per_task", c.router.routing_seeds_per_task);
  {
    Block costs = rt.sub("costs");
    costs.get("c_slm", ts.costs.c_slm);
    costs.get("c_llm", ts.costs.c_llm);
    costs.get("kappa", ts.costs.kappa);
    costs.finish();
    Block cv = rt.sub("cvar");
    cv.get("alpha", ts.cvar.alpha);
    cv.get("epsilon", ts.cvar.epsilon);
    cv.get("lambda_brier", ts.cvar.lambda_brier);
    cv.get("lambda_init", ts.cvar.lambda_init);
    cv.finish();
  }
  std::string mode = "bayes";
  rt.get("threshold_mode", mode);
  if (mode == "bayes") {
    c.router.threshold_mode = ThresholdMode::Bayes;
  } else if (mode == "sweep") {
    c.router.threshold_mode = ThresholdMode::Sweep;
  } else {
    throw ConfigError("router.threshold_mode must be 'bayes' or 'sweep'");
  }
  rt.finish();

  Block run = Block::top(root, "runtime");
  run.get("k", c.runtime.k);
  if (run.has("budget")) {
    const json& b = run.raw("budget");
    if (b.is_null()) {
      c.runtime.budget.reset();
    } else if (b.is_number_integer()) {
      c.runtime.budget = b.get<int>();
    } else {
      throw ConfigError("runtime.budget must be an integer or null");
    }
  }
  run.get("seed", c.runtime.seed);
  run.finish();

  Block ev = Block::top(root, "eval");
  ev.get("seeds_per_task", c.eval.seeds_per_task);
  ev.get("bootstrap_resamples", c.eval.bootstrap_resamples);
  ev.get("ci_level", c.eval.ci_level);
  ev.get("bootstrap_seed", c.eval.bootstrap_seed);
  ev.get("lambda_cons_grid", c.eval.lambda_cons_grid);
  ev.get("cvar_grid", c.eval.cvar_grid);
  ev.finish();

  c.validate();
  return c;
}

json config_to_json(const RunConfig& c) {
  json fam = json::object();
  for (Family f : kAllFamilies) {
    const auto i = static_cast<std::size_t>(f);
    fam[std::string(to_string(f))] = {{"enabled", c.env.families_enabled[i]},
                                      {"intensity", c.env.family_intensities[i]}};
  }
  const TrainSpec& ts = c.router.train;
  return json{
      {"env",
       {{"state_count", c.env.state_count},
        {"action_count", c.env.action_count},
        {"horizon", c.env.horizon},
        {"goal_vocab_size", c.env.goal_vocab_size},
        {"task_count", c.env.task_count},
        {"max_subgoals", c.env.max_subgoals},
        {"min_slack", c.env.min_slack},
        {"hazard_density", c.env.hazard_density},
        {"reward_success", c.env.reward_success},
        {"discount", c.env.discount},
        {"rng_seed", c.env.rng_seed},
        {"families", fam},
        {"split", {{"fractions", c.split_fractions}, {"seed", c.split_seed}}}}},
      {"policy",
       {{"teacher_error_rate", c.policy.teacher_error_rate},
        {"teacher_seeds_per_task", c.policy.teacher_seeds_per_task},
        {"bc_epochs", c.policy.bc_epochs},
        {"bc_learning_rate", c.policy.bc_learning_rate},
        {"seed", c.policy.seed}}},
      {"verifier", {{"eta_v", c.verifier.eta_v}, {"gamma_threshold", c.verifier.gamma_threshold}}},
      {"distill",
       {{"beta", c.distill.beta},
        {"lambda_cons", c.distill.lambda_cons},
        {"candidates", c.distill.candidates},
        {"epochs", c.distill.epochs},
        {"learning_rate", c.distill.learning_rate},
        {"seed", c.distill_seed}}},
      {"features", {{"mask", std::string(to_string(c.mask))}}},
      {"router",
       {{"lr", ts.lr},
        {"weight_decay", ts.weight_decay},
        {"dual_lr", ts.dual_lr},
        {"epochs", ts.epochs},
        {"batch_steps", ts.batch_steps},
        {"dropout", ts.dropout},
        {"seed", ts.seed},
        {"routing_seeds_per_task", c.router.routing_seeds_per_task},
        {"costs", {{"c_slm", ts.costs.c_slm}, {"c_llm", ts.costs.c_llm}, {"kappa", ts.costs.kappa}}},
        {"cvar",
         {{"alpha", ts.cvar.alpha},
          {"epsilon", ts.cvar.epsilon},
          {"lambda_brier", ts.cvar.lambda_brier},
          {"lambda_init", ts.cvar.lambda_init}}},
        {"threshold_mode", c.router.threshold_mode == ThresholdMode::Bayes ? "bayes" : "sweep"}}},
      {"runtime",
       {{"k", c.runtime.k},
        {"budget", c.runtime.budget ? json(*c.runtime.budget) : json(nullptr)},
        {"seed", c.runtime.seed}}},
      {"eval",
       {{"seeds_per_task", c.eval.seeds_per_task},
        {"bootstrap_resamples", c.eval.bootstrap_resamples},
        {"ci_level", c.eval.ci_level},
        {"bootstrap_seed", c.eval.bootstrap_seed},
        {"lambda_cons_grid", c.eval.lambda_cons_grid},
        {"cvar_grid", c.eval.cvar_grid}}}};
}

void apply_env_overrides(json& j, const std::vector<std::pair<std::string, std::string>>& env) {
  static const std::string prefix = "RISKROUTE__";
  for (const auto& [name, value] : env) {
    if (name.rfind(prefix, 0) != 0) continue;
    std::vector<std::string> path;
    std::string rest = name.substr(prefix.size());
    for (std::size_t at; (at = rest.find("__")) != std::string::npos;) {
      path.push_back(rest.substr(0, at));
      rest = rest.substr(at + 2);
    }
    path.push_back(rest);
    for (const auto& p : path)
      if (p.empty()) throw ConfigError("malformed override variable " + name);
    json* node = &j;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      if (!node->contains(path[i])) (*node)[path[i]] = json::object();
      node = &(*node)[path[i]];
      if (!node->is_object()) throw ConfigError("override " + name + " descends into a non-object");
    }
    json v = json::parse(value, nullptr, false);
    (*node)[path.back()] = v.is_discarded() ? json(value) : v;
  }
}

std::vector<std::pair<std::string, std::string>> process_env_overrides() {
  std::vector<std::pair<std::string, std::string>> out;
  for (char** e = environ; e && *e; ++e) {
    const std::string kv = *e;
    const auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    if (kv.rfind("RISKROUTE__", 0) == 0) out.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  std::sort(out.begin(), out.end());
  return out;
}

RunConfig load_config(const std::filesystem::path& path) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path.string());
    j = json::parse(f, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  }
  apply_env_overrides(j, process_env_overrides());
  return config_from_json(j);
}

std::string config_hash(const RunConfig& c) {
  const std::string s = config_to_json(c).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream o;
  o << std::hex << h;
  std::string hex = o.str();
  return std::string(16 - hex.size(), '0') + hex;
}

}  // namespace riskroute

#include "riskroute/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace riskroute {

std::string_view to_string(PolicyStage s) {
  switch (s) {
    case PolicyStage::Initial: return "initial";
    case PolicyStage::BehaviorCloned: return "bc";
    case PolicyStage::Distilled: return "distilled";
  }
  return "unknown";
}

PolicyFeatureMap::PolicyFeatureMap(const EnvConfig& config)
    : vocab_(config.goal_vocab_size),
      actions_(config.action_count),
      horizon_(config.horizon),
      layout_(config.state_count),
      dim_(static_cast<std::size_t>(vocab_ + 3 + actions_ + 1)) {}

std::vector<double> PolicyFeatureMap::operator()(const Context& x) const {
  std::vector<double> phi(dim_, 0.0);
  for (Token tok : x.last_observation())
    if (tok >= 0 && tok < vocab_) phi[static_cast<std::size_t>(tok)] = 1.0;

  const int subgoals = std::max(1, static_cast<int>(x.goal.size()) - 3);
  int visible = 0;
  for (auto it = x.observations.rbegin(); it != x.observations.rend(); ++it) {
    auto c = std::find_if(it->begin(), it->end(), [&](Token t) { return layout_.is_count(t); });
    if (c != it->end()) {
      visible = *c - layout_.count(0);
      break;
    }
  }
  const auto v = static_cast<std::size_t>(vocab_);
  phi[v] = visible >= subgoals ? 1.0 : 0.0;
  phi[v + 1] = std::min(1.0, static_cast<double>(visible) / subgoals);
  phi[v + 2] = static_cast<double>(x.step_index) / horizon_;
  const std::size_t last = v + 3;
  if (x.actions.empty()) {
    phi[last + static_cast<std::size_t>(actions_)] = 1.0;
  } else {
    const ActionId a = x.actions.back();
    if (a >= 0 && a < actions_) phi[last + static_cast<std::size_t>(a)] = 1.0;
  }
  return phi;
}

SoftmaxPolicy::SoftmaxPolicy(const EnvConfig& config, double temperature)
    : features_(config), actions_(config.action_count), temperature_(temperature) {
  set_temperature(temperature);
  params_.assign(features_.dim() * static_cast<std::size_t>(actions_) + static_cast<std::size_t>(actions_), 0.0);
}

void SoftmaxPolicy::set_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) throw std::invalid_argument("policy temperature must be positive");
  temperature_ = t;
}

void SoftmaxPolicy::set_params(std::vector<double> p) {
  if (p.size() != params_.size()) throw std::invalid_argument("parameter vector has the wrong size");
  params_ = std::move(p);
}

std::vector<double> SoftmaxPolicy::logits_with(std::span<const double> params,
                                               std::span<const double> phi) const {
  const auto a_count = static_cast<std::size_t>(actions_);
  const std::size_t bias = features_.dim() * a_count;
  std::vector<double> z(params.begin() + static_cast<std::ptrdiff_t>(bias), params.end());
  for (std::size_t f = 0; f < phi.size(); ++f) {
    if (phi[f] == 0.0) continue;
    const double* row = params.data() + f * a_count;
    for (std::size_t a = 0; a < a_count; ++a) z[a] += phi[f] * row[a];
  }
  for (double& v : z) v /= temperature_;
  return z;
}

std::vector<double> SoftmaxPolicy::logits(std::span<const double> phi) const {
  return logits_with(params_, phi);
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double v : logits) s += std::exp(v - m);
  const double lse = m + std::log(s);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::vector<double> SoftmaxPolicy::log_probs(const Context& x) const {
  const auto phi = features(x);
  return log_softmax(logits(phi));
}

std::vector<double> SoftmaxPolicy::action_distribution(const Context& x) const {
  auto lp = log_probs(x);
  for (double& v : lp) v = std::exp(v);
  return lp;
}

std::uint64_t SoftmaxPolicy::hash() const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto feed = [&](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001B3ULL;
    }
  };
  feed(params_.data(), params_.size() * sizeof(double));
  feed(&temperature_, sizeof(double));
  return h;
}

std::vector<Candidate> sample_candidates(const SoftmaxPolicy& policy, const Context& x, int k, Rng& rng) {
  if (k < 1) throw std::invalid_argument("K must be >= 1");
  const auto lp = policy.log_probs(x);
  std::vector<double> cdf(lp.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) cdf[i] = (acc += std::exp(lp[i]));
  std::vector<Candidate> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const double u = rng.uniform() * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    auto a = static_cast<std::size_t>(it - cdf.begin());
    if (a >= lp.size()) a = lp.size() - 1;
    out.push_back({static_cast<ActionId>(a), lp[a]});
  }
  return out;
}

TeacherPolicy::TeacherPolicy(const Environment& env, double error_rate) : env_(&env), error_rate_(error_rate) {
  if (!(error_rate >= 0.0 && error_rate < 1.0)) throw ConfigError("teacher error rate must be in [0,1)");
}

ActionId TeacherPolicy::act(const LatentState& s, Rng& rng) const {
  const ActionId best = env_->optimal_action(s);
  const double u = rng.uniform();
  if (u >= error_rate_) return best;
  const int n = env_->config().action_count;
  auto a = static_cast<ActionId>(rng.uniform_int(static_cast<std::uint64_t>(n - 1)));
  return a >= best ? a + 1 : a;
}

std::vector<double> TeacherPolicy::distribution(const LatentState& s) const {
  const int n = env_->config().action_count;
  std::vector<double> p(static_cast<std::size_t>(n), error_rate_ / (n - 1));
  p[static_cast<std::size_t>(env_->optimal_action(s))] = 1.0 - error_rate_;
  return p;
}

PerturbationSeed episode_seed(std::uint64_t purpose, TaskId task, std::uint64_t index) {
  return {hash_keys({purpose, task, index})};
}

namespace {

PerturbedEpisode teacher_episode(const Environment& env, const TeacherPolicy& teacher, TaskId task,
                                 PerturbationSeed z, Rng rng, std::string source) {
  PerturbedEpisode ep;
  ep.task_id = task;
  ep.seed = z;
  ep.source = std::move(source);
  auto [state, ctx] = env.reset(task, z);
  for (int t = 0; t < env.config().horizon; ++t) {
    StepRecord rec;
    rec.context = ctx;
    rec.chosen_action = teacher.act(state, rng);
    rec.executor = Executor::Llm;
    ep.steps.push_back(rec);
    ++ep.llm_calls;
    StepOutcome o = env.step(state, rec.chosen_action, z, t);
    if (o.terminal) {
      ep.success = o.success;
      break;
    }
    state = o.state;
    ctx.actions.push_back(rec.chosen_action);
    ctx.observations.push_back(std::move(o.observation));
    ctx.step_index += 1;
  }
  return ep;
}

}  // namespace

std::vector<PerturbedEpisode> collect_teacher_trajectories(const Environment& env,
                                                           const TeacherPolicy& teacher,
                                                           const std::vector<TaskId>& tasks,
                                                           int seeds_per_task, std::uint64_t seed) {
  const Environment clean_env(env.config().clean());
  const TeacherPolicy clean_teacher(clean_env, teacher.error_rate());
  std::vector<PerturbedEpisode> pool;
  pool.reserve(tasks.size() * static_cast<std::size_t>(seeds_per_task + 1));
  for (TaskId task : tasks) {
    const PerturbationSeed z0 = episode_seed(seed_purpose::kTeacherClean ^ seed, task, 0);
    pool.push_back(teacher_episode(clean_env, clean_teacher, task, z0,
                                   Rng::keyed({seed, task, 0xC1EAULL}), "teacher_clean"));
    for (int i = 0; i < seeds_per_task; ++i) {
      const PerturbationSeed z = episode_seed(seed_purpose::kTeacherPerturbed ^ seed, task,
                                              static_cast<std::uint64_t>(i));
      pool.push_back(teacher_episode(env, teacher, task, z,
                                     Rng::keyed({seed, task, 0x9E27ULL, static_cast<std::uint64_t>(i)}),
                                     "teacher_perturbed"));
    }
  }
  return pool;
}

std::vector<BCExample> bc_dataset(const SoftmaxPolicy& shape, const std::vector<PerturbedEpisode>& pool) {
  std::vector<BCExample> data;
  for (const auto& ep : pool) {
    if (!ep.success) continue;
    for (const auto& s : ep.steps) data.push_back({shape.features(s.context), s.chosen_action});
  }
  return data;
}

double bc_loss(const SoftmaxPolicy& shape, std::span<const double> params,
               const std::vector<BCExample>& data, std::span<double> grad) {
  const auto a_count = static_cast<std::size_t>(shape.action_count());
  const std::size_t bias = shape.feature_dim() * a_count;
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(data.size());
  const double inv_t = 1.0 / shape.temperature();
  for (const auto& ex : data) {
    const auto lp = log_softmax(shape.logits_with(params, ex.phi));
    loss -= lp[static_cast<std::size_t>(ex.action)];
    if (grad.empty()) continue;
    for (std::size_t a = 0; a < a_count; ++a) {
      const double g = (std::exp(lp[a]) - (static_cast<int>(a) == ex.action ? 1.0 : 0.0)) * inv_n * inv_t;
      grad[bias + a] += g;
      for (std::size_t f = 0; f < ex.phi.size(); ++f)
        if (ex.phi[f] != 0.0) grad[f * a_count + a] += ex.phi[f] * g;
    }
  }
  return loss * inv_n;
}

BCResult train_bc(const EnvConfig& config, const std::vector<PerturbedEpisode>& pool, const BCOptions& opt) {
  SoftmaxPolicy policy(config);
  const auto data = bc_dataset(policy, pool);
  if (data.empty())
    throw std::invalid_argument("behavior cloning needs at least one successful episode in the pool");
  std::vector<double> params(policy.params().begin(), policy.params().end());
  LineSearchOptions ls;
  ls.epochs = opt.epochs;
  ls.initial_step = opt.learning_rate;
  auto trace = minimize_with_line_search(
      params, [&](std::span<const double> p, std::span<double> g) { return bc_loss(policy, p, data, g); }, ls);
  policy.set_params(std::move(params));
  policy.set_stage(PolicyStage::BehaviorCloned);
  return {std::move(policy), std::move(trace), data.size()};
}

namespace {
constexpr char kPolicyMagic[8] = {'R', 'R', 'P', 'O', 'L', '0', '0', '1'};

template <class T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("truncated policy checkpoint");
  return v;
}
}  // namespace

void save_policy(const std::filesystem::path& path, const SoftmaxPolicy& policy, const std::string& config_hash) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kPolicyMagic, sizeof(kPolicyMagic));
  put(out, static_cast<std::uint32_t>(policy.feature_dim()));
  put(out, static_cast<std::uint32_t>(policy.action_count()));
  put(out, static_cast<std::uint8_t>(policy.stage()));
  put(out, policy.temperature());
  put(out, policy.hash());
  put(out, static_cast<std::uint32_t>(config_hash.size()));
  out.write(config_hash.data(), static_cast<std::streamsize>(config_hash.size()));
  put(out, static_cast<std::uint64_t>(policy.params().size()));
  out.write(reinterpret_cast<const char*>(policy.params().data()),
            static_cast<std::streamsize>(policy.params().size() * sizeof(double)));
}

SoftmaxPolicy load_policy(const std::filesystem::path& path, const EnvConfig& config, std::string* config_hash_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kPolicyMagic, sizeof(magic)) != 0)
    throw std::runtime_error(path.string() + " is not a policy checkpoint");
  const auto fdim = get<std::uint32_t>(in);
  const auto acount = get<std::uint32_t>(in);
  const auto stage = get<std::uint8_t>(in);
  const auto temperature = get<double>(in);
  const auto stored_hash = get<std::uint64_t>(in);
  const auto hash_len = get<std::uint32_t>(in);
  std::string cfg_hash(hash_len, '\0');
  in.read(cfg_hash.data(), hash_len);
  const auto n = get<std::uint64_t>(in);
  std::vector<double> params(n);
  in.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw std::runtime_error("truncated policy checkpoint");

  SoftmaxPolicy policy(config, temperature);
  if (policy.feature_dim() != fdim || policy.action_count() != static_cast<int>(acount))
    throw std::runtime_error("policy checkpoint dimensions do not match the configuration");
  policy.set_params(std::move(params));
  if (stage > static_cast<std::uint8_t>(PolicyStage::Distilled))
    throw std::runtime_error("unknown policy stage tag");
  policy.set_stage(static_cast<PolicyStage>(stage));
  if (policy.hash() != stored_hash) throw std::runtime_error("policy checkpoint hash mismatch");
  if (config_hash_out) *config_hash_out = cfg_hash;
  return policy;
}

}  // namespace riskroute

#include "riskroute/distill.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace riskroute {

void DistillConfig::validate() const {
  if (!(beta > 0.0)) throw ConfigError("distill.beta must be positive");
  if (!(lambda_cons >= 0.0)) throw ConfigError("distill.lambda_cons must be nonnegative");
  if (candidates < 2) throw ConfigError("distill.candidates must be >= 2");
  if (epochs < 0) throw ConfigError("distill.epochs must be nonnegative");
}

std::vector<ConsistencyPair> paired_trajectory(const Environment& env, TaskId task,
                                               const std::vector<ActionId>& actions, PerturbationSeed z,
                                               PerturbationSeed z_prime) {
  const auto a = replay(env, task, actions, z);
  const auto b = replay(env, task, actions, z_prime);
  std::vector<ConsistencyPair> out;
  out.reserve(a.size());
  for (std::size_t t = 0; t < a.size() && t < b.size(); ++t) {
    if (!(a[t].state == b[t].state)) throw std::logic_error("paired replays diverged in latent state");
    out.push_back({a[t].context, b[t].context, env.optimal_action(a[t].state)});
  }
  return out;
}

PreferenceBuildResult build_preferences(const SoftmaxPolicy& bc_policy, const std::vector<PerturbedEpisode>& pool,
                                        const Environment& env, const Verifier& verifier,
                                        const TeacherPolicy* teacher, int k, std::uint64_t seed) {
  if (bc_policy.stage() != PolicyStage::BehaviorCloned)
    throw std::invalid_argument("preference pairs must be generated by the behavior-cloned policy");
  if (k < 2) throw std::invalid_argument("preference construction needs K >= 2");
  const double gamma = verifier.spec().gamma_threshold;
  const std::uint64_t gen_hash = bc_policy.hash();
  PreferenceBuildResult out;

  for (const auto& ep : pool) {
    std::vector<ActionId> actions;
    for (const auto& s : ep.steps) actions.push_back(s.chosen_action);
    const auto latent = replay(env, ep.task_id, actions, ep.seed);
    for (std::size_t t = 0; t < ep.steps.size() && t < latent.size(); ++t) {
      const Context& x = ep.steps[t].context;
      const LatentState& state = latent[t].state;
      ++out.contexts;
      Rng rng = Rng::keyed({seed, ep.task_id, ep.seed.z, t, 0x9A1DULL});
      const auto cands = sample_candidates(bc_policy, x, k, rng);
      const auto scores = verifier.score_all(state, cands, rng);
      const std::size_t best = argmax_lowest(scores);
      const std::size_t worst = static_cast<std::size_t>(std::min_element(scores.begin(), scores.end()) - scores.begin());

      PreferencePair pair;
      pair.context = x;
      pair.generator_stage = bc_policy.stage();
      pair.generator_hash = gen_hash;
      if (scores[best] >= gamma) {
        if (cands[best].action == cands[worst].action) {
          ++out.skipped_identical;
          continue;
        }
        pair.a_plus = cands[best].action;
        pair.a_minus = cands[worst].action;
        pair.source = PairSource::VerifierRanked;
        ++out.verifier_ranked;
      } else {
        if (teacher == nullptr) {
          ++out.skipped_no_teacher;
          continue;
        }
        const ActionId recovery = teacher->act(state, rng);
        if (recovery == cands[best].action) {
          ++out.skipped_identical;
          continue;
        }
        pair.a_plus = recovery;
        pair.a_minus = cands[best].action;
        pair.source = PairSource::TeacherRecovered;
        ++out.teacher_recovered;
      }
      out.pairs.push_back(std::move(pair));
    }

    const PerturbationSeed z_prime{hash_keys({seed_purpose::kConsistency, seed, ep.seed.z})};
    auto views = paired_trajectory(env, ep.task_id, actions, ep.seed, z_prime);
    out.consistency.insert(out.consistency.end(), std::make_move_iterator(views.begin()),
                           std::make_move_iterator(views.end()));
  }
  return out;
}

double dpo_margin(const SoftmaxPolicy& policy, const SoftmaxPolicy& reference, const PreferencePair& pair,
                  double beta) {
  const auto lp = policy.log_probs(pair.context);
  const auto lr = reference.log_probs(pair.context);
  const auto p = static_cast<std::size_t>(pair.a_plus);
  const auto m = static_cast<std::size_t>(pair.a_minus);
  return beta * ((lp[p] - lr[p]) - (lp[m] - lr[m]));
}

namespace {
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }
}  // namespace

double dpo_loss(const SoftmaxPolicy& policy, const FrozenReference& reference, const PreferencePair& pair,
                double beta) {
  return softplus(-dpo_margin(policy, reference.policy(), pair, beta));
}

double jensen_shannon(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("distributions differ in support size");
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) js += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) js += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::clamp(js, 0.0, std::log(2.0));
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("distributions differ in support size");
  double tv = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) tv += std::abs(p[i] - q[i]);
  return 0.5 * tv;
}

double consistency_loss(const SoftmaxPolicy& policy, const std::vector<ConsistencyPair>& pairs) {
  if (pairs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& c : pairs)
    total += jensen_shannon(policy.action_distribution(c.view_a), policy.action_distribution(c.view_b));
  return total / static_cast<double>(pairs.size());
}

RecoveryObjective::RecoveryObjective(const SoftmaxPolicy& shape, const FrozenReference& reference,
                                     const std::vector<PreferencePair>& pairs,
                                     const std::vector<ConsistencyPair>& consistency, double beta, double lambda_cons)
    : shape_(&shape), beta_(beta), lambda_cons_(lambda_cons) {
  prefs_.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.a_plus == p.a_minus) throw std::invalid_argument("preference pair with identical actions");
    const auto lr = reference.policy().log_probs(p.context);
    prefs_.push_back({shape.features(p.context), p.a_plus, p.a_minus,
                      lr[static_cast<std::size_t>(p.a_plus)] - lr[static_cast<std::size_t>(p.a_minus)]});
  }
  cons_.reserve(consistency.size());
  for (const auto& c : consistency) cons_.push_back({shape.features(c.view_a), shape.features(c.view_b)});
}

void RecoveryObjective::accumulate(std::span<const double> phi, std::span<const double> dz, std::span<double> grad,
                                   double scale) const {
  const auto a_count = static_cast<std::size_t>(shape_->action_count());
  const std::size_t bias = shape_->feature_dim() * a_count;
  const double s = scale / shape_->temperature();
  for (std::size_t a = 0; a < a_count; ++a) {
    const double g = dz[a] * s;
    if (g == 0.0) continue;
    grad[bias + a] += g;
    for (std::size_t f = 0; f < phi.size(); ++f)
      if (phi[f] != 0.0) grad[f * a_count + a] += phi[f] * g;
  }
}

double RecoveryObjective::dpo(std::span<const double> params, std::span<double> grad) const {
  if (prefs_.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(prefs_.size());
  const auto a_count = static_cast<std::size_t>(shape_->action_count());
  std::vector<double> dz(a_count);
  double loss = 0.0;
  for (const auto& row : prefs_) {
    const auto lp = log_softmax(shape_->logits_with(params, row.phi));
    const auto p = static_cast<std::size_t>(row.plus);
    const auto m = static_cast<std::size_t>(row.minus);
    const double u = beta_ * ((lp[p] - lp[m]) - row.ref_diff);
    loss += softplus(-u);
    if (grad.empty()) continue;
    // d lp[a]/dz = e_a - softmax, so the softmax terms cancel in the margin.
    const double dl_du = -sigmoid(-u);
    std::fill(dz.begin(), dz.end(), 0.0);
    dz[p] += dl_du * beta_;
    dz[m] -= dl_du * beta_;
    accumulate(row.phi, dz, grad, inv_n);
  }
  return loss * inv_n;
}

double RecoveryObjective::consistency(std::span<const double> params, std::span<double> grad) const {
  if (cons_.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(cons_.size());
  const auto a_count = static_cast<std::size_t>(shape_->action_count());
  std::vector<double> p(a_count), q(a_count), gp(a_count), gq(a_count), dz(a_count);
  double loss = 0.0;
  for (const auto& row : cons_) {
    const auto lpa = log_softmax(shape_->logits_with(params, row.phi_a));
    const auto lpb = log_softmax(shape_->logits_with(params, row.phi_b));
    double js = 0.0;
    for (std::size_t i = 0; i < a_count; ++i) {
      p[i] = std::exp(lpa[i]);
      q[i] = std::exp(lpb[i]);
      const double lm = std::log(0.5 * (p[i] + q[i]));
      gp[i] = 0.5 * (lpa[i] - lm);
      gq[i] = 0.5 * (lpb[i] - lm);
      js += p[i] * gp[i] + q[i] * gq[i];
    }
    loss += js;
    if (grad.empty()) continue;
    double mp = 0.0, mq = 0.0;
    for (std::size_t i = 0; i < a_count; ++i) {
      mp += p[i] * gp[i];
      mq += q[i] * gq[i];
    }
    for (std::size_t i = 0; i < a_count; ++i) dz[i] = p[i] * (gp[i] - mp);
    accumulate(row.phi_a, dz, grad, inv_n);
    for (std::size_t i = 0; i < a_count; ++i) dz[i] = q[i] * (gq[i] - mq);
    accumulate(row.phi_b, dz, grad, inv_n);
  }
  return loss * inv_n;
}

double RecoveryObjective::operator()(std::span<const double> params, std::span<double> grad) const {
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
  double loss = dpo(params, grad);
  if (lambda_cons_ > 0.0 && !cons_.empty()) {
    std::vector<double> gc;
    if (!grad.empty()) gc.assign(grad.size(), 0.0);
    loss += lambda_cons_ * consistency(params, gc);
    for (std::size_t i = 0; i < gc.size(); ++i) grad[i] += lambda_cons_ * gc[i];
  }
  return loss;
}

DistillResult train_recovery(const SoftmaxPolicy& bc_policy, const std::vector<PreferencePair>& pairs,
                             const std::vector<ConsistencyPair>& consistency, const DistillConfig& config) {
  config.validate();
  if (bc_policy.stage() != PolicyStage::BehaviorCloned)
    throw std::invalid_argument("recovery distillation must start from the behavior-cloned policy");
  const FrozenReference reference(bc_policy);
  for (const auto& p : pairs)
    if (p.generator_hash != reference.recorded_hash() || p.generator_stage != PolicyStage::BehaviorCloned)
      throw std::invalid_argument("preference pair was not generated by the reference policy");

  SoftmaxPolicy policy = bc_policy;
  const RecoveryObjective objective(policy, reference, pairs, consistency, config.beta, config.lambda_cons);
  std::vector<double> params(bc_policy.params().begin(), bc_policy.params().end());
  LineSearchOptions ls;
  ls.epochs = config.epochs;
  ls.initial_step = config.learning_rate;
  auto trace = minimize_with_line_search(
      params, [&](std::span<const double> p, std::span<double> g) { return objective(p, g); }, ls);
  policy.set_params(params);
  policy.set_stage(PolicyStage::Distilled);

  DistillResult out{std::move(policy), std::move(trace), 0.0, 0.0, reference.recorded_hash(), 0};
  out.final_dpo = objective.dpo(params, {});
  out.final_consistency = objective.consistency(params, {});
  out.reference_hash_after = reference.policy().hash();
  return out;
}

TransferAudit audit_transfer(const SoftmaxPolicy& policy, std::span<const ConsistencyPair> trajectory) {
  TransferAudit a;
  for (const auto& c : trajectory) {
    const auto p = policy.action_distribution(c.view_a);
    const auto q = policy.action_distribution(c.view_b);
    const auto i = static_cast<std::size_t>(c.optimal_action);
    a.risk_a += 1.0 - p[i];
    a.risk_b += 1.0 - q[i];
    a.mean_jsd += jensen_shannon(p, q);
    a.sum_tv += total_variation(p, q);
    ++a.steps;
  }
  if (a.steps > 0) a.mean_jsd /= static_cast<double>(a.steps);
  return a;
}

json context_to_json(const Context& x) {
  return json{{"goal", x.goal}, {"obs", x.observations}, {"actions", x.actions}, {"t", x.step_index}};
}

Context context_from_json(const json& j) {
  Context x;
  x.goal = j.at("goal").get<TokenSeq>();
  x.observations = j.at("obs").get<std::vector<TokenSeq>>();
  x.actions = j.at("actions").get<std::vector<ActionId>>();
  x.step_index = j.at("t").get<int>();
  if (x.observations.size() != static_cast<std::size_t>(x.step_index) + 1 ||
      x.actions.size() != static_cast<std::size_t>(x.step_index))
    throw std::invalid_argument("context lengths inconsistent with step index");
  return x;
}

void write_pairs(const std::filesystem::path& path, const ArtifactHeader& header,
                 const std::vector<PreferencePair>& pairs, const std::vector<ConsistencyPair>& consistency) {
  RecordWriter w(path, header);
  for (const auto& p : pairs) {
    json j{{"schema", "riskroute.pair/v1"},
           {"kind", "pref"},
           {"x", context_to_json(p.context)},
           {"plus", p.a_plus},
           {"minus", p.a_minus},
           {"source", p.source == PairSource::VerifierRanked ? "verifier" : "teacher"},
           {"generator_stage", to_string(p.generator_stage)},
           {"generator_hash", p.generator_hash}};
    w.write(j.dump());
  }
  for (const auto& c : consistency) {
    json j{{"schema", "riskroute.pair/v1"},
           {"kind", "cons"},
           {"a", context_to_json(c.view_a)},
           {"b", context_to_json(c.view_b)},
           {"opt", c.optimal_action}};
    w.write(j.dump());
  }
}

void read_pairs(const std::filesystem::path& path, std::vector<PreferencePair>& pairs,
                std::vector<ConsistencyPair>& consistency, ArtifactHeader* header_out) {
  RecordFile file = read_record_file(path);
  if (header_out && file.header) *header_out = *file.header;
  for (std::size_t i = 0; i < file.records.size(); ++i) {
    const std::string& r = file.records[i];
    try {
      const json j = json::parse(r);
      if (j.at("schema") != "riskroute.pair/v1") throw std::invalid_argument("unexpected schema");
      if (j.at("kind") == "pref") {
        PreferencePair p;
        p.context = context_from_json(j.at("x"));
        p.a_plus = j.at("plus").get<ActionId>();
        p.a_minus = j.at("minus").get<ActionId>();
        p.source = j.at("source") == "verifier" ? PairSource::VerifierRanked : PairSource::TeacherRecovered;
        p.generator_stage =
            j.at("generator_stage") == "bc" ? PolicyStage::BehaviorCloned : PolicyStage::Initial;
        p.generator_hash = j.at("generator_hash").get<std::uint64_t>();
        pairs.push_back(std::move(p));
      } else {
        consistency.push_back(
            {context_from_json(j.at("a")), context_from_json(j.at("b")), j.at("opt").get<ActionId>()});
      }
    } catch (const json::parse_error& e) {
      throw ParseError(file.offsets[i] + json_error_offset(e), path.string() + " record " + std::to_string(i) + ": " + e.what());
    } catch (const std::exception& e) {
      throw ParseError(file.offsets[i] + r.size(), path.string() + " record " + std::to_string(i) + ": " + e.what());
    }
  }
}

}  // namespace riskroute

#include "riskroute/features.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "riskroute/verifier.hpp"

namespace riskroute {
namespace {

struct Moments {
  double mean = 0.0;
  double stdev = 0.0;
};

Moments moments(std::span<const double> v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.stdev = std::sqrt(ss / static_cast<double>(v.size()));
  return m;
}

}  // namespace

FeatureLimits feature_limits(const Environment& env) {
  FeatureLimits l;
  l.horizon = env.config().horizon;
  l.max_steps = std::max(64, env.config().horizon);
  l.max_goal_length = env.max_goal_length();
  const std::size_t longest_obs = kCleanObsLength + 3 + 4;
  l.max_tokens = static_cast<std::size_t>(l.max_goal_length) +
                 static_cast<std::size_t>(env.config().horizon) * longest_obs;
  return l;
}

RiskFeatures extract_features(const Context& x, const SoftmaxPolicy& policy, std::span<const Candidate> candidates,
                              std::span<const double> scores, const FeatureLimits& limits) {
  const std::size_t k = candidates.size();
  if (k < 2 || scores.size() != k) throw std::invalid_argument("feature extraction needs K >= 2 aligned candidates");
  RiskFeatures f;

  const auto lp = policy.log_probs(x);
  double h = 0.0;
  for (double l : lp) {
    const double p = std::exp(l);
    if (p > 0.0) h -= p * l;
  }
  f[slot::kPolicyEntropy] = std::clamp(h / std::log(static_cast<double>(lp.size())), 0.0, 1.0);

  std::vector<double> cand_lp(k);
  for (std::size_t i = 0; i < k; ++i) cand_lp[i] = std::clamp(candidates[i].log_prob, kLogProbFloor, 0.0);
  const Moments lpm = moments(cand_lp);
  f[slot::kLogProbMean] = lpm.mean;
  f[slot::kLogProbStd] = lpm.stdev;

  const Moments vm = moments(scores);
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  f[slot::kVerifierMean] = vm.mean;
  f[slot::kVerifierStd] = vm.stdev;
  f[slot::kVerifierSpread] = *hi - *lo;
  f[slot::kVerifierBest] = *hi;
  f[slot::kVerifierWorst] = *lo;

  std::map<ActionId, int> counts;
  for (const auto& c : candidates) ++counts[c.action];
  int modal = 0;
  double ent = 0.0;
  for (const auto& [a, n] : counts) {
    modal = std::max(modal, n);
    const double p = static_cast<double>(n) / static_cast<double>(k);
    ent -= p * std::log(p);
  }
  f[slot::kConsistency] = static_cast<double>(modal) / static_cast<double>(k);
  f[slot::kSemanticEntropy] = std::clamp(ent / std::log(static_cast<double>(k)), 0.0, 1.0);

  f[slot::kHorizonFraction] = std::clamp(static_cast<double>(x.step_index) / limits.horizon, 0.0, 1.0);
  f[slot::kStepIndex] = static_cast<double>(x.step_index) / limits.max_steps;
  f[slot::kContextLength] =
      std::min(1.0, static_cast<double>(x.token_count()) / static_cast<double>(limits.max_tokens));
  f[slot::kGoalLength] = std::min(1.0, static_cast<double>(x.goal.size()) / limits.max_goal_length);
  f[slot::kPseudoEntropy] = pseudo_entropy(scores);
  return f;
}

std::string_view to_string(FeatureMask m) {
  switch (m) {
    case FeatureMask::Full: return "full";
    case FeatureMask::NoEntropy: return "no_entropy";
    case FeatureMask::PseudoEntropy: return "pseudo_entropy";
    case FeatureMask::VerifierOnly: return "verifier_only";
    case FeatureMask::EntropyOnly: return "entropy_only";
    case FeatureMask::LogProbOnly: return "logprob_only";
    case FeatureMask::StepContextOnly: return "step_context_only";
    case FeatureMask::NoVerifier: return "no_verifier";
  }
  return "unknown";
}

FeatureMask mask_from_string(std::string_view name) {
  for (FeatureMask m : kAllMasks)
    if (to_string(m) == name) return m;
  throw ConfigError("unknown feature mask: " + std::string(name));
}

RiskFeatures apply_mask(const RiskFeatures& f, FeatureMask mask) {
  auto keep_only = [&](std::initializer_list<std::size_t> keep) {
    RiskFeatures out;
    for (std::size_t i : keep) out[i] = f[i];
    return out;
  };
  auto zero = [&](std::initializer_list<std::size_t> drop) {
    RiskFeatures out = f;
    for (std::size_t i : drop) out[i] = 0.0;
    return out;
  };
  switch (mask) {
    case FeatureMask::Full: return f;
    case FeatureMask::NoEntropy:
      return zero({slot::kPolicyEntropy, slot::kLogProbMean, slot::kLogProbStd, slot::kSemanticEntropy});
    case FeatureMask::PseudoEntropy: {
      RiskFeatures out = zero({slot::kPolicyEntropy, slot::kLogProbMean, slot::kLogProbStd, slot::kSemanticEntropy});
      out[slot::kPolicyEntropy] = f[slot::kPseudoEntropy];
      return out;
    }
    case FeatureMask::VerifierOnly:
      return keep_only({slot::kVerifierMean, slot::kVerifierStd, slot::kVerifierSpread, slot::kVerifierBest,
                        slot::kVerifierWorst, slot::kPseudoEntropy});
    case FeatureMask::EntropyOnly: return keep_only({slot::kPolicyEntropy, slot::kSemanticEntropy});
    case FeatureMask::LogProbOnly: return keep_only({slot::kLogProbMean, slot::kLogProbStd});
    case FeatureMask::StepContextOnly:
      return keep_only({slot::kHorizonFraction, slot::kStepIndex, slot::kContextLength, slot::kGoalLength});
    case FeatureMask::NoVerifier:
      return zero({slot::kVerifierMean, slot::kVerifierStd, slot::kVerifierSpread, slot::kVerifierBest,
                   slot::kVerifierWorst, slot::kPseudoEntropy});
  }
  return f;
}

}  // namespace riskroute

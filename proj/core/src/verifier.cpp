#include "riskroute/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace riskroute {

double VerifierSpec::jitter_width() const {
  const double s = std::sqrt(2.0 * eta_v);
  return 1.0 / (2.0 - s);
}

void VerifierSpec::validate() const {
  if (!(eta_v >= 0.0 && eta_v < 0.5)) throw ConfigError("verifier.eta_v must be in [0,0.5)");
  if (!(gamma_threshold >= 0.0 && gamma_threshold <= 1.0))
    throw ConfigError("verifier.gamma_threshold must be in [0,1]");
}

VerifierSpec VerifierSpec::from_regime(const std::string& regime) {
  VerifierSpec s;
  if (regime == "low") {
    s.eta_v = 0.05;
  } else if (regime == "high") {
    s.eta_v = 0.40;
  } else if (regime == "exact") {
    s.eta_v = 0.0;
  } else {
    throw ConfigError("unknown verifier regime: " + regime);
  }
  return s;
}

Verifier::Verifier(const Environment& env, VerifierSpec spec) : env_(&env), spec_(spec) { spec_.validate(); }

double Verifier::draw(const VerifierSpec& spec, bool good, Rng& rng) {
  const double w = spec.jitter_width();
  const double u = rng.uniform();
  const double v = good ? 1.0 - u * w : u * w;
  return std::clamp(v, 0.0, 1.0);
}

double Verifier::score(const LatentState& s, ActionId a, Rng& rng) const {
  return draw(spec_, env_->is_valid_action(a) && a == env_->optimal_action(s), rng);
}

std::vector<double> Verifier::score_all(const LatentState& s, std::span<const Candidate> candidates,
                                        Rng& rng) const {
  std::vector<double> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) out.push_back(score(s, c.action, rng));
  return out;
}

std::size_t argmax_lowest(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("argmax of an empty score list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

BestOfK best_of_k(std::span<const Candidate> candidates, std::span<const double> scores) {
  if (candidates.empty() || candidates.size() != scores.size())
    throw std::invalid_argument("best_of_k needs K >= 1 aligned candidates and scores");
  const std::size_t i = argmax_lowest(scores);
  return {i, candidates[i].action, scores[i]};
}

double pseudo_entropy(std::span<const double> scores) {
  const std::size_t k = scores.size();
  if (k < 2) throw std::invalid_argument("pseudo-entropy needs at least two scores");
  const double m = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - m);
  double h = 0.0;
  for (double s : scores) {
    const double p = std::exp(s - m) / z;
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::clamp(h / std::log(static_cast<double>(k)), 0.0, 1.0);
}

}  // namespace riskroute

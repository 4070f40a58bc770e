#pragma once

#include <span>
#include <string>
#include <vector>

#include "riskroute/domain.hpp"
#include "riskroute/env.hpp"
#include "riskroute/rng.hpp"

namespace riskroute {

/// Noisy process verifier. Scores are a latent-state quality oracle (optimal
/// action = good, anything else = bad) plus independent uniform jitter.
///
/// With s = sqrt(2 eta), good scores are uniform on (1-w, 1] and bad scores
/// uniform on [0, w) for w = 1/(2-s). Their difference is triangular and a
/// good/bad pair is misranked with probability exactly s^2/2 = eta.
struct VerifierSpec {
  double eta_v = 0.05;
  double gamma_threshold = 0.5;

  double jitter_width() const;
  void validate() const;

  static VerifierSpec from_regime(const std::string& regime);
};

class Verifier {
 public:
  Verifier(const Environment& env, VerifierSpec spec);

  const VerifierSpec& spec() const { return spec_; }

  /// Score of action `a` at the latent state behind the current context.
  double score(const LatentState& s, ActionId a, Rng& rng) const;
  std::vector<double> score_all(const LatentState& s, std::span<const Candidate> candidates, Rng& rng) const;

  /// Score drawn from the good or bad class directly.
  static double draw(const VerifierSpec& spec, bool good, Rng& rng);

 private:
  const Environment* env_;
  VerifierSpec spec_;
};

struct BestOfK {
  std::size_t index = 0;
  ActionId action = 0;
  double score = 0.0;
};

/// Argmax over scores, lowest index on ties.
std::size_t argmax_lowest(std::span<const double> scores);
BestOfK best_of_k(std::span<const Candidate> candidates, std::span<const double> scores);

/// Normalized entropy of softmax(scores); 1 iff all scores are equal.
double pseudo_entropy(std::span<const double> scores);

}  // namespace riskroute

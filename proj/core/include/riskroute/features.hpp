#pragma once

#include <span>
#include <string_view>

#include "riskroute/domain.hpp"
#include "riskroute/env.hpp"
#include "riskroute/policy.hpp"

namespace riskroute {

/// Slot layout of RiskFeatures.
namespace slot {
inline constexpr std::size_t kPolicyEntropy = 0;
inline constexpr std::size_t kLogProbMean = 1;
inline constexpr std::size_t kLogProbStd = 2;
inline constexpr std::size_t kVerifierMean = 3;
inline constexpr std::size_t kVerifierStd = 4;
inline constexpr std::size_t kVerifierSpread = 5;
inline constexpr std::size_t kVerifierBest = 6;
inline constexpr std::size_t kVerifierWorst = 7;
inline constexpr std::size_t kConsistency = 8;
inline constexpr std::size_t kSemanticEntropy = 9;
inline constexpr std::size_t kHorizonFraction = 10;
inline constexpr std::size_t kStepIndex = 11;
inline constexpr std::size_t kContextLength = 12;
inline constexpr std::size_t kGoalLength = 13;
inline constexpr std::size_t kPseudoEntropy = 14;
}  // namespace slot

inline constexpr double kLogProbFloor = -20.0;

struct FeatureLimits {
  int horizon = 20;
  /// Scale for the absolute step index slot.
  int max_steps = 64;
  std::size_t max_tokens = 256;
  int max_goal_length = 5;
};

/// Limits implied by an environment: the longest observation is a clean
/// observation with both an injection and a distractor block appended.
FeatureLimits feature_limits(const Environment& env);

RiskFeatures extract_features(const Context& x, const SoftmaxPolicy& policy, std::span<const Candidate> candidates,
                              std::span<const double> scores, const FeatureLimits& limits);

enum class FeatureMask : std::uint8_t {
  Full,
  NoEntropy,
  PseudoEntropy,
  VerifierOnly,
  EntropyOnly,
  LogProbOnly,
  StepContextOnly,
  NoVerifier,
};
inline constexpr std::array<FeatureMask, 8> kAllMasks = {
    FeatureMask::Full,        FeatureMask::NoEntropy,   FeatureMask::PseudoEntropy,   FeatureMask::VerifierOnly,
    FeatureMask::EntropyOnly, FeatureMask::LogProbOnly, FeatureMask::StepContextOnly, FeatureMask::NoVerifier};

std::string_view to_string(FeatureMask m);
FeatureMask mask_from_string(std::string_view name);

/// Inference-time masking; the router is never retrained on masked inputs.
RiskFeatures apply_mask(const RiskFeatures& f, FeatureMask mask);

}  // namespace riskroute

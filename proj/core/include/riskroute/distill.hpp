#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "riskroute/domain.hpp"
#include "riskroute/env.hpp"
#include "riskroute/policy.hpp"
#include "riskroute/records.hpp"
#include "riskroute/verifier.hpp"

namespace riskroute {

enum class PairSource : std::uint8_t { VerifierRanked = 0, TeacherRecovered = 1 };

struct PreferencePair {
  Context context;
  ActionId a_plus = 0;
  ActionId a_minus = 0;
  PairSource source = PairSource::VerifierRanked;
  /// Stage and hash of the policy that sampled the candidates.
  PolicyStage generator_stage = PolicyStage::BehaviorCloned;
  std::uint64_t generator_hash = 0;
};

/// Two observation histories of one latent trajectory under different seeds.
struct ConsistencyPair {
  Context view_a;
  Context view_b;
  /// Teacher-optimal action at the shared latent state.
  ActionId optimal_action = 0;
};

struct DistillConfig {
  double beta = 0.1;
  double lambda_cons = 0.20;
  int candidates = 5;
  int epochs = 150;
  double learning_rate = 1.0;

  void validate() const;
};

struct PreferenceBuildResult {
  std::vector<PreferencePair> pairs;
  std::vector<ConsistencyPair> consistency;
  std::size_t contexts = 0;
  std::size_t verifier_ranked = 0;
  std::size_t teacher_recovered = 0;
  std::size_t skipped_identical = 0;
  std::size_t skipped_no_teacher = 0;
};

/// For every context in the pool: sample K candidates from the BC policy and
/// score them. If the best score clears gamma the pair is (best, worst);
/// otherwise the teacher's action is preferred over the best candidate.
/// Consistency views replay each episode's actions under a second seed.
PreferenceBuildResult build_preferences(const SoftmaxPolicy& bc_policy, const std::vector<PerturbedEpisode>& pool,
                                        const Environment& env, const Verifier& verifier,
                                        const TeacherPolicy* teacher, int k, std::uint64_t seed);

/// DPO margin u = beta * [(log pi(a+) - log ref(a+)) - (log pi(a-) - log ref(a-))].
double dpo_margin(const SoftmaxPolicy& policy, const SoftmaxPolicy& reference, const PreferencePair& pair, double beta);
/// -log sigmoid(u).
double dpo_loss(const SoftmaxPolicy& policy, const FrozenReference& reference, const PreferencePair& pair, double beta);

/// Jensen-Shannon divergence in nats.
double jensen_shannon(std::span<const double> p, std::span<const double> q);
double total_variation(std::span<const double> p, std::span<const double> q);

/// Mean JSD between the policy's action distributions on paired views.
double consistency_loss(const SoftmaxPolicy& policy, const std::vector<ConsistencyPair>& pairs);

/// Combined recovery objective evaluated at `params` (policy shape only).
class RecoveryObjective {
 public:
  RecoveryObjective(const SoftmaxPolicy& shape, const FrozenReference& reference,
                    const std::vector<PreferencePair>& pairs, const std::vector<ConsistencyPair>& consistency,
                    double beta, double lambda_cons);

  double dpo(std::span<const double> params, std::span<double> grad) const;
  double consistency(std::span<const double> params, std::span<double> grad) const;
  double operator()(std::span<const double> params, std::span<double> grad) const;

 private:
  struct PrefRow {
    std::vector<double> phi;
    ActionId plus, minus;
    double ref_diff;
  };
  struct ConsRow {
    std::vector<double> phi_a, phi_b;
  };
  void accumulate(std::span<const double> phi, std::span<const double> dz, std::span<double> grad,
                  double scale) const;

  const SoftmaxPolicy* shape_;
  std::vector<PrefRow> prefs_;
  std::vector<ConsRow> cons_;
  double beta_;
  double lambda_cons_;
};

struct DistillResult {
  SoftmaxPolicy policy;
  LineSearchTrace trace;
  double final_dpo = 0.0;
  double final_consistency = 0.0;
  std::uint64_t reference_hash_before = 0;
  std::uint64_t reference_hash_after = 0;
};

/// Continues from the BC parameters on DPO + lambda_cons * JSD with the BC
/// policy frozen as reference. Rejects pairs that were not generated by the
/// reference policy.
DistillResult train_recovery(const SoftmaxPolicy& bc_policy, const std::vector<PreferencePair>& pairs,
                             const std::vector<ConsistencyPair>& consistency, const DistillConfig& config);

/// Per-pair audit of the consistency transfer bound.
struct TransferAudit {
  double risk_a = 0.0;
  double risk_b = 0.0;
  double mean_jsd = 0.0;
  double sum_tv = 0.0;
  std::size_t steps = 0;
};

/// Episodic surrogate risk sum_t (1 - P(a*_t)) for both views of one latent
/// trajectory, plus the per-step divergences between them.
TransferAudit audit_transfer(const SoftmaxPolicy& policy, std::span<const ConsistencyPair> trajectory);

/// Paired views along a fixed action sequence under seeds z and z'.
std::vector<ConsistencyPair> paired_trajectory(const Environment& env, TaskId task,
                                               const std::vector<ActionId>& actions, PerturbationSeed z,
                                               PerturbationSeed z_prime);

json context_to_json(const Context& x);
Context context_from_json(const json& j);

void write_pairs(const std::filesystem::path& path, const ArtifactHeader& header,
                 const std::vector<PreferencePair>& pairs, const std::vector<ConsistencyPair>& consistency);
void read_pairs(const std::filesystem::path& path, std::vector<PreferencePair>& pairs,
                std::vector<ConsistencyPair>& consistency, ArtifactHeader* header_out = nullptr);

}  // namespace riskroute

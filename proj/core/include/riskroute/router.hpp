#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "riskroute/domain.hpp"
#include "riskroute/rng.hpp"

namespace riskroute {
/// Over-aligned so Eigen reductions over parameter slices do not depend on
/// where the allocator placed the buffer.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;


/// Feed-forward risk scorer 15 -> 128 -> 64 -> 1 with batch normalization,
/// GELU, dropout and a sigmoid output divided by a post-hoc temperature.
///
/// All trainable parameters live in one flat vector; running statistics are
/// kept separately and never touched by the optimizer.
class RouterNet {
 public:
  static constexpr int kInput = static_cast<int>(kFeatureDim);
  static constexpr int kHidden1 = 128;
  static constexpr int kHidden2 = 64;
  static constexpr double kBnEps = 1e-5;
  static constexpr double kBnMomentum = 0.1;

  RouterNet(double dropout = 0.2);

  /// He-style uniform initialization.
  void initialize(Rng& rng);

  std::size_t parameter_count() const { return params_.size(); }
  std::span<const double> params() const { return params_; }
  ParamVector& mutable_params() { return params_; }

  double temperature() const { return temperature_; }
  void set_temperature(double t);
  double dropout() const { return dropout_; }

  /// Samples as columns (kInput x n).
  using Batch = Eigen::Matrix<double, kInput, Eigen::Dynamic>;

  /// Eval-mode logits (before temperature).
  Eigen::VectorXd logits(const Batch& x) const;
  /// Eval-mode probability sigmoid(logit / T) for one feature vector.
  double predict(const RiskFeatures& f) const;
  std::vector<double> predict(const std::vector<RiskFeatures>& fs) const;

  struct TrainPass;
  /// Train-mode forward with batch statistics and a dropout mask drawn from
  /// `mask_seed`. Returns logits; the pass keeps what backward needs.
  Eigen::VectorXd forward_train(const Batch& x, std::uint64_t mask_seed, TrainPass& pass) const;
  /// Accumulates dL/dparams given dL/dlogit into `grad` (resized/zeroed).
  void backward(const TrainPass& pass, const Eigen::VectorXd& dlogit, ParamVector& grad) const;
  /// Folds the batch statistics of a train pass into the running stats.
  void update_running_stats(const TrainPass& pass);

  const Eigen::VectorXd& running_mean(int layer) const { return layer == 0 ? rm1_ : rm2_; }
  const Eigen::VectorXd& running_var(int layer) const { return layer == 0 ? rv1_ : rv2_; }
  void set_running_stats(int layer, Eigen::VectorXd mean, Eigen::VectorXd var);

  struct TrainPass {
    Batch x;
    Eigen::MatrixXd xhat1, a1, drop1, h1pre;
    Eigen::MatrixXd xhat2, a2, drop2, h2pre;
    Eigen::VectorXd mean1, var1, mean2, var2;
    Eigen::MatrixXd out1, out2;
    Eigen::MatrixXd cdf1, cdf2;
  };

  friend bool operator==(const RouterNet&, const RouterNet&);

 private:
  using MapMat = Eigen::Map<const Eigen::MatrixXd>;
  using MapVec = Eigen::Map<const Eigen::VectorXd>;
  MapMat w1() const { return MapMat(params_.data() + o_w1_, kHidden1, kInput); }
  MapVec b1() const { return MapVec(params_.data() + o_b1_, kHidden1); }
  MapVec g1() const { return MapVec(params_.data() + o_g1_, kHidden1); }
  MapVec be1() const { return MapVec(params_.data() + o_be1_, kHidden1); }
  MapMat w2() const { return MapMat(params_.data() + o_w2_, kHidden2, kHidden1); }
  MapVec b2() const { return MapVec(params_.data() + o_b2_, kHidden2); }
  MapVec g2() const { return MapVec(params_.data() + o_g2_, kHidden2); }
  MapVec be2() const { return MapVec(params_.data() + o_be2_, kHidden2); }
  MapMat w3() const { return MapMat(params_.data() + o_w3_, 1, kHidden2); }
  double b3() const { return params_[o_b3_]; }

  std::size_t o_w1_, o_b1_, o_g1_, o_be1_, o_w2_, o_b2_, o_g2_, o_be2_, o_w3_, o_b3_;
  ParamVector params_;
  Eigen::VectorXd rm1_, rv1_, rm2_, rv2_;
  double dropout_;
  double temperature_ = 1.0;
};

RouterNet::Batch to_batch(std::span<const RiskFeatures> fs);

double sigmoid(double x);
double gelu(double x);
double gelu_derivative(double x);

/// c_SLM (1-p) + c_LLM p + kappa y (1-p).
double route_surrogate(double p, int y, const CostSpec& costs);
/// d route_surrogate / dp.
double route_surrogate_slope(int y, const CostSpec& costs);
double brier(double p, int y);
double mean_brier(std::span<const double> p, std::span<const int> y);

struct SeedRiskTable {
  std::map<std::uint64_t, double> risk;
  std::size_t excluded = 0;
};

/// Per-seed mean of the routing surrogate. `p` is aligned with `examples`.
SeedRiskTable seed_risk(std::span<const RoutingExample> examples, std::span<const double> p, const CostSpec& costs);

/// Mean of the worst ceil(alpha n) values.
double cvar(std::span<const double> values, double alpha);
/// Indices of the worst ceil(alpha n) values; ties broken by ascending id.
std::vector<std::size_t> cvar_tail(std::span<const double> values, std::span<const std::uint64_t> ids, double alpha);

struct TrainSpec {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double dual_lr = 1e-2;
  int epochs = 20;
  std::size_t batch_steps = 4096;
  double dropout = 0.2;
  CostSpec costs;
  CVaRSpec cvar;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Batch-size weighted means of the train-mode batch objectives.
struct EpochReport {
  int epoch = 0;
  double mean_risk = 0.0;
  double cvar = 0.0;
  double brier = 0.0;
  double lambda = 0.0;
};

/// Per-batch Lagrangian pieces used by training and by the gradient checks.
struct BatchObjective {
  double loss = 0.0;
  double mean_risk = 0.0;
  double cvar = 0.0;
  double brier = 0.0;
  /// dLoss/dlogit for each example in the batch.
  Eigen::VectorXd dlogit;
};

/// E_z[R] + lambda (CVaR_alpha(R) - eps) + lambda_B Brier on probabilities
/// sigmoid(logits / T), with seed risks over the seeds present.
BatchObjective lagrangian(const Eigen::VectorXd& logits, double temperature, std::span<const int> labels,
                          std::span<const std::uint64_t> seed_ids, double lambda, const TrainSpec& spec);

struct TrainResult {
  RouterNet net;
  std::vector<EpochReport> report;
  /// Lambda after every dual step.
  std::vector<double> lambda_trace;
};

/// Primal-dual training: AdamW with cosine annealing on the network, Adam
/// ascent on log lambda. Minibatches hold whole seeds.
TrainResult train_router(std::span<const RoutingExample> data, const TrainSpec& spec);

void write_report_csv(const std::filesystem::path& path, const std::vector<EpochReport>& report);

struct TemperatureFit {
  double temperature = 1.0;
  double nll_before = 0.0;
  double nll_after = 0.0;
  double ece_before = 0.0;
  double ece_after = 0.0;
  bool degenerate = false;
  bool guarded = false;
};

/// Golden-section search over log T in [-3, 3] minimizing the NLL of
/// sigmoid(logit / T). Falls back to T = 1 on single-label data.
TemperatureFit fit_temperature_logits(std::span<const double> logits, std::span<const int> labels);
TemperatureFit fit_temperature(RouterNet& net, std::span<const RoutingExample> validation);

/// clamp((c_LLM - c_SLM) / kappa, 0, 1).
double bayes_threshold(const CostSpec& costs);

/// Escalation decision d = 1[p >= tau].
inline bool escalate(double p, double tau) { return p >= tau; }

struct SweepResult {
  double threshold = 0.0;
  double cost = 0.0;
  double escalation_rate = 0.0;
};

inline constexpr int kSweepGridSize = 99;
inline double sweep_grid(int i) { return static_cast<double>(i + 1) / 100.0; }

/// Grid search over tau in {0.01..0.99}: escalate when `score >= tau`, or when
/// `score < tau` if `escalate_below`. Minimizes the mean hard-decision
/// surrogate. Ties go to the tau that escalates least: the highest tau, or
/// the lowest with `escalate_below`.
SweepResult sweep_threshold(std::span<const double> scores, std::span<const int> labels, const CostSpec& costs,
                            bool escalate_below = false);

enum class ThresholdMode { Bayes, Sweep };

double select_threshold(const RouterNet& net, std::span<const RoutingExample> validation, const CostSpec& costs,
                        ThresholdMode mode);

struct RouterModel {
  RouterNet net;
  double threshold = 0.5;
};

void save_router(const std::filesystem::path& path, const RouterModel& model, const std::string& config_hash);
RouterModel load_router(const std::filesystem::path& path, std::string* config_hash_out = nullptr);

}  // namespace riskroute

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "riskroute/domain.hpp"
#include "riskroute/records.hpp"

namespace riskroute {

inline constexpr int kEceBins = 15;
inline constexpr int kBootstrapResamples = 1000;

struct RunMetrics {
  double success_rate = 0.0;
  double llm_rate = 0.0;
  double ece = 0.0;
  double brier = 0.0;
  double auroc = 0.5;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t episodes = 0;
  std::size_t steps = 0;
  std::size_t llm_calls = 0;
};

struct CiOptions {
  int resamples = kBootstrapResamples;
  double level = 0.95;
  std::uint64_t seed = 2024;
};

/// SR, step-level LLM rate and a bootstrap interval for SR. Calibration
/// fields are left at their defaults.
RunMetrics compute_metrics(const std::vector<PerturbedEpisode>& episodes, const CiOptions& ci = {});

/// Equal-width binned expected calibration error, sample weighted. The last
/// bin is closed on the right.
double ece(std::span<const double> p, std::span<const int> y, int bins = kEceBins);

/// Mann-Whitney AUROC; tied scores share their average rank.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Percentile bootstrap over episodes.
std::pair<double, double> bootstrap_ci(std::span<const int> successes, int resamples, double level,
                                       std::uint64_t seed);

/// One row of a sweep table: leading grid coordinates then metrics.
struct SweepRow {
  std::vector<std::pair<std::string, std::string>> coords;
  std::string variant;
  RunMetrics metrics;
};

void write_metrics_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);
/// (variant, llm_rate, SR, ci_low, ci_high) per row.
void write_pareto_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);
json metrics_to_json(const RunMetrics& m);

}  // namespace riskroute

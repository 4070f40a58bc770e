#include "riskroute/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "riskroute/rng.hpp"

namespace riskroute {

RunMetrics compute_metrics(const std::vector<PerturbedEpisode>& episodes, const CiOptions& ci) {
  if (episodes.empty()) throw std::invalid_argument("metrics need at least one episode");
  RunMetrics m;
  std::vector<int> succ;
  succ.reserve(episodes.size());
  for (const auto& ep : episodes) {
    succ.push_back(ep.success ? 1 : 0);
    m.steps += ep.steps.size();
    for (const auto& s : ep.steps) m.llm_calls += s.executor == Executor::Llm;
  }
  m.episodes = episodes.size();
  m.success_rate = static_cast<double>(std::accumulate(succ.begin(), succ.end(), 0)) / static_cast<double>(succ.size());
  m.llm_rate = m.steps ? static_cast<double>(m.llm_calls) / static_cast<double>(m.steps) : 0.0;
  if (succ.size() >= 2) {
    std::tie(m.ci_low, m.ci_high) = bootstrap_ci(succ, ci.resamples, ci.level, ci.seed);
  } else {
    m.ci_low = m.ci_high = m.success_rate;
  }
  return m;
}

double ece(std::span<const double> p, std::span<const int> y, int bins) {
  if (p.size() != y.size()) throw std::invalid_argument("ece needs aligned inputs");
  if (p.empty()) return 0.0;
  std::vector<double> conf(static_cast<std::size_t>(bins), 0.0), acc(static_cast<std::size_t>(bins), 0.0);
  std::vector<std::size_t> n(static_cast<std::size_t>(bins), 0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0 && p[i] <= 1.0)) throw std::invalid_argument("ece predictions must lie in [0,1]");
    const auto b = static_cast<std::size_t>(std::min(bins - 1, static_cast<int>(p[i] * bins)));
    conf[b] += p[i];
    acc[b] += y[i];
    ++n[b];
  }
  double e = 0.0;
  for (std::size_t b = 0; b < n.size(); ++b)
    if (n[b]) e += std::abs(acc[b] - conf[b]);
  return e / static_cast<double>(p.size());
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auroc needs aligned inputs");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank_sum += avg;
    i = j;
  }
  for (int l : labels) pos += l != 0;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw std::invalid_argument("auroc needs both labels present");
  const double np = static_cast<double>(pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(neg));
}

std::pair<double, double> bootstrap_ci(std::span<const int> successes, int resamples, double level,
                                       std::uint64_t seed) {
  const std::size_t n = successes.size();
  if (n < 2) throw std::invalid_argument("bootstrap needs at least two episodes");
  if (resamples < 1 || !(level > 0.0 && level < 1.0)) throw std::invalid_argument("bad bootstrap options");
  Rng rng(seed);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    long s = 0;
    for (std::size_t i = 0; i < n; ++i) s += successes[rng.uniform_int(n)];
    m = static_cast<double>(s) / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  const double tail = (1.0 - level) / 2.0;
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(means.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, means.size() - 1);
    return means[lo] + (pos - static_cast<double>(lo)) * (means[hi] - means[lo]);
  };
  double point = 0.0;
  for (int s : successes) point += s;
  point /= static_cast<double>(n);
  return {std::min(quantile(tail), point), std::max(quantile(1.0 - tail), point)};
}

namespace {
void write_row_metrics(std::ofstream& f, const RunMetrics& m) {
  f << m.success_rate << ',' << m.llm_rate << ',' << m.ci_low << ',' << m.ci_high << ',' << m.ece << ','
    << m.brier << ',' << m.auroc << ',' << m.episodes << ',' << m.steps << ',' << m.llm_calls;
}
}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.precision(10);
  if (!rows.empty())
    for (const auto& [k, v] : rows.front().coords) f << k << ',';
  f << "variant,success_rate,llm_rate,ci_low,ci_high,ece,brier,auroc,episodes,steps,llm_calls\n";
  for (const auto& r : rows) {
    for (const auto& [k, v] : r.coords) f << v << ',';
    f << r.variant << ',';
    write_row_metrics(f, r.metrics);
    f << '\n';
  }
}

void write_pareto_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.precision(10);
  f << "variant,llm_rate,success_rate,ci_low,ci_high\n";
  for (const auto& r : rows)
    f << r.variant << ',' << r.metrics.llm_rate << ',' << r.metrics.success_rate << ',' << r.metrics.ci_low << ','
      << r.metrics.ci_high << '\n';
}

json metrics_to_json(const RunMetrics& m) {
  return json{{"success_rate", m.success_rate}, {"llm_rate", m.llm_rate}, {"ci_low", m.ci_low},
              {"ci_high", m.ci_high},           {"ece", m.ece},           {"brier", m.brier},
              {"auroc", m.auroc},               {"episodes", m.episodes}, {"steps", m.steps},
              {"llm_calls", m.llm_calls}};
}

}  // namespace riskroute

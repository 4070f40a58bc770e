#include "riskroute/router.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "riskroute/eval.hpp"

namespace riskroute {

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

RouterNet::RouterNet(double dropout) : dropout_(dropout) {
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("router dropout must be in [0,1)");
  std::size_t o = 0;
  auto take = [&](std::size_t n) {
    const std::size_t at = o;
    o += n;
    return at;
  };
  o_w1_ = take(kHidden1 * kInput);
  o_b1_ = take(kHidden1);
  o_g1_ = take(kHidden1);
  o_be1_ = take(kHidden1);
  o_w2_ = take(kHidden2 * kHidden1);
  o_b2_ = take(kHidden2);
  o_g2_ = take(kHidden2);
  o_be2_ = take(kHidden2);
  o_w3_ = take(kHidden2);
  o_b3_ = take(1);
  params_.assign(o, 0.0);
  std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(o_g1_), kHidden1, 1.0);
  std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(o_g2_), kHidden2, 1.0);
  rm1_ = Eigen::VectorXd::Zero(kHidden1);
  rv1_ = Eigen::VectorXd::Ones(kHidden1);
  rm2_ = Eigen::VectorXd::Zero(kHidden2);
  rv2_ = Eigen::VectorXd::Ones(kHidden2);
}

void RouterNet::initialize(Rng& rng) {
  auto fill = [&](std::size_t at, std::size_t n, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < n; ++i) params_[at + i] = rng.uniform(-bound, bound);
  };
  fill(o_w1_, kHidden1 * kInput, kInput);
  fill(o_b1_, kHidden1, kInput);
  fill(o_w2_, kHidden2 * kHidden1, kHidden1);
  fill(o_b2_, kHidden2, kHidden1);
  fill(o_w3_, kHidden2, kHidden2);
  fill(o_b3_, 1, kHidden2);
}

void RouterNet::set_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) throw std::invalid_argument("temperature must be positive");
  temperature_ = t;
}

void RouterNet::set_running_stats(int layer, Eigen::VectorXd mean, Eigen::VectorXd var) {
  const int n = layer == 0 ? kHidden1 : kHidden2;
  if (mean.size() != n || var.size() != n) throw std::invalid_argument("running stats size mismatch");
  (layer == 0 ? rm1_ : rm2_) = std::move(mean);
  (layer == 0 ? rv1_ : rv2_) = std::move(var);
}

RouterNet::Batch to_batch(std::span<const RiskFeatures> fs) {
  RouterNet::Batch x(RouterNet::kInput, static_cast<Eigen::Index>(fs.size()));
  for (std::size_t j = 0; j < fs.size(); ++j) {
    if (!fs[j].finite()) throw std::invalid_argument("non-finite router input");
    for (int i = 0; i < RouterNet::kInput; ++i) x(i, static_cast<Eigen::Index>(j)) = fs[j][static_cast<std::size_t>(i)];
  }
  return x;
}

namespace {

Eigen::MatrixXd apply_gelu(const Eigen::MatrixXd& m) { return m.unaryExpr([](double v) { return gelu(v); }); }

Eigen::MatrixXd normal_cdf(const Eigen::MatrixXd& m) {
  return m.unaryExpr([](double v) { return 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2)); });
}

// d gelu / dx from the cached cdf.
Eigen::MatrixXd gelu_grad(const Eigen::MatrixXd& x, const Eigen::MatrixXd& cdf) {
  const double c = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return cdf.array() + x.array() * (-0.5 * x.array().square()).exp() * c;
}

Eigen::MatrixXd batch_norm_backward(const Eigen::MatrixXd& dout, const Eigen::MatrixXd& xhat,
                                    const Eigen::VectorXd& gamma, const Eigen::VectorXd& var) {
  const double n = static_cast<double>(dout.cols());
  const Eigen::MatrixXd dxhat = dout.array().colwise() * gamma.array();
  const Eigen::VectorXd sum_d = dxhat.rowwise().sum();
  const Eigen::VectorXd sum_dx = (dxhat.array() * xhat.array()).rowwise().sum();
  const Eigen::VectorXd inv_std = (var.array() + RouterNet::kBnEps).rsqrt();
  Eigen::MatrixXd out = (n * dxhat).colwise() - sum_d;
  out -= (xhat.array().colwise() * sum_dx.array()).matrix();
  return (out.array().colwise() * (inv_std.array() / n)).matrix();
}

}  // namespace

Eigen::VectorXd RouterNet::logits(const Batch& x) const {
  Eigen::MatrixXd h1 = (w1() * x).colwise() + b1();
  h1 = ((h1.colwise() - rm1_).array().colwise() * ((rv1_.array() + kBnEps).rsqrt() * g1().array())).matrix();
  h1 = apply_gelu(h1.colwise() + be1());
  Eigen::MatrixXd h2 = (w2() * h1).colwise() + b2();
  h2 = ((h2.colwise() - rm2_).array().colwise() * ((rv2_.array() + kBnEps).rsqrt() * g2().array())).matrix();
  h2 = apply_gelu(h2.colwise() + be2());
  Eigen::VectorXd z = (w3() * h2).transpose();
  return z.array() + b3();
}

double RouterNet::predict(const RiskFeatures& f) const {
  const std::array<RiskFeatures, 1> one{f};
  return sigmoid(logits(to_batch(one))(0) / temperature_);
}

std::vector<double> RouterNet::predict(const std::vector<RiskFeatures>& fs) const {
  std::vector<double> out(fs.size());
  constexpr std::size_t kChunk = 8192;
  for (std::size_t s = 0; s < fs.size(); s += kChunk) {
    const std::size_t e = std::min(fs.size(), s + kChunk);
    const Eigen::VectorXd z = logits(to_batch(std::span(fs).subspan(s, e - s)));
    for (std::size_t i = s; i < e; ++i) out[i] = sigmoid(z(static_cast<Eigen::Index>(i - s)) / temperature_);
  }
  return out;
}

Eigen::VectorXd RouterNet::forward_train(const Batch& x, std::uint64_t mask_seed, TrainPass& pass) const {
  const Eigen::Index n = x.cols();
  Rng rng(mask_seed);
  const double keep = 1.0 - dropout_;
  auto mask = [&](Eigen::Index rows) {
    Eigen::MatrixXd m(rows, n);
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform() < keep ? 1.0 / keep : 0.0;
    return m;
  };
  auto norm = [&](const Eigen::MatrixXd& h, Eigen::VectorXd& mean, Eigen::VectorXd& var) {
    mean = h.rowwise().mean();
    const Eigen::MatrixXd c = h.colwise() - mean;
    var = c.array().square().rowwise().mean();
    return Eigen::MatrixXd(c.array().colwise() * (var.array() + kBnEps).rsqrt());
  };

  pass.x = x;
  pass.h1pre = (w1() * x).colwise() + b1();
  pass.xhat1 = norm(pass.h1pre, pass.mean1, pass.var1);
  pass.out1 = (pass.xhat1.array().colwise() * g1().array()).matrix().colwise() + be1();
  pass.cdf1 = normal_cdf(pass.out1);
  pass.a1 = pass.out1.cwiseProduct(pass.cdf1);
  pass.drop1 = dropout_ > 0.0 ? mask(kHidden1) : Eigen::MatrixXd::Ones(kHidden1, n);
  const Eigen::MatrixXd a1d = pass.a1.cwiseProduct(pass.drop1);

  pass.h2pre = (w2() * a1d).colwise() + b2();
  pass.xhat2 = norm(pass.h2pre, pass.mean2, pass.var2);
  pass.out2 = (pass.xhat2.array().colwise() * g2().array()).matrix().colwise() + be2();
  pass.cdf2 = normal_cdf(pass.out2);
  pass.a2 = pass.out2.cwiseProduct(pass.cdf2);
  pass.drop2 = dropout_ > 0.0 ? mask(kHidden2) : Eigen::MatrixXd::Ones(kHidden2, n);
  const Eigen::MatrixXd a2d = pass.a2.cwiseProduct(pass.drop2);

  Eigen::VectorXd z = (w3() * a2d).transpose();
  return z.array() + b3();
}

void RouterNet::backward(const TrainPass& pass, const Eigen::VectorXd& dlogit, ParamVector& grad) const {
  grad.assign(params_.size(), 0.0);
  using Mat = Eigen::Map<Eigen::MatrixXd>;
  using Vec = Eigen::Map<Eigen::VectorXd>;
  const Eigen::MatrixXd a1d = pass.a1.cwiseProduct(pass.drop1);
  const Eigen::MatrixXd a2d = pass.a2.cwiseProduct(pass.drop2);

  Mat(grad.data() + o_w3_, 1, kHidden2) = dlogit.transpose() * a2d.transpose();
  grad[o_b3_] = dlogit.sum();

  Eigen::MatrixXd d = (w3().transpose() * dlogit.transpose()).cwiseProduct(pass.drop2);
  d = d.cwiseProduct(gelu_grad(pass.out2, pass.cdf2));
  Vec(grad.data() + o_g2_, kHidden2) = d.cwiseProduct(pass.xhat2).rowwise().sum();
  Vec(grad.data() + o_be2_, kHidden2) = d.rowwise().sum();
  d = batch_norm_backward(d, pass.xhat2, g2(), pass.var2);
  Mat(grad.data() + o_w2_, kHidden2, kHidden1) = d * a1d.transpose();
  Vec(grad.data() + o_b2_, kHidden2) = d.rowwise().sum();

  d = (w2().transpose() * d).cwiseProduct(pass.drop1);
  d = d.cwiseProduct(gelu_grad(pass.out1, pass.cdf1));
  Vec(grad.data() + o_g1_, kHidden1) = d.cwiseProduct(pass.xhat1).rowwise().sum();
  Vec(grad.data() + o_be1_, kHidden1) = d.rowwise().sum();
  d = batch_norm_backward(d, pass.xhat1, g1(), pass.var1);
  Mat(grad.data() + o_w1_, kHidden1, kInput) = d * pass.x.transpose();
  Vec(grad.data() + o_b1_, kHidden1) = d.rowwise().sum();
}

void RouterNet::update_running_stats(const TrainPass& pass) {
  const double n = static_cast<double>(pass.x.cols());
  const double unbias = n > 1 ? n / (n - 1.0) : 1.0;
  rm1_ = (1.0 - kBnMomentum) * rm1_ + kBnMomentum * pass.mean1;
  rv1_ = (1.0 - kBnMomentum) * rv1_ + kBnMomentum * unbias * pass.var1;
  rm2_ = (1.0 - kBnMomentum) * rm2_ + kBnMomentum * pass.mean2;
  rv2_ = (1.0 - kBnMomentum) * rv2_ + kBnMomentum * unbias * pass.var2;
}

bool operator==(const RouterNet& a, const RouterNet& b) {
  return a.params_ == b.params_ && a.rm1_ == b.rm1_ && a.rv1_ == b.rv1_ && a.rm2_ == b.rm2_ && a.rv2_ == b.rv2_ &&
         a.dropout_ == b.dropout_ && a.temperature_ == b.temperature_;
}

double route_surrogate(double p, int y, const CostSpec& costs) {
  return costs.c_slm * (1.0 - p) + costs.c_llm * p + costs.kappa * y * (1.0 - p);
}

double route_surrogate_slope(int y, const CostSpec& costs) { return costs.c_llm - costs.c_slm - costs.kappa * y; }

double brier(double p, int y) { return (p - y) * (p - y); }

double mean_brier(std::span<const double> p, std::span<const int> y) {
  if (p.empty() || p.size() != y.size()) throw std::invalid_argument("brier needs aligned nonempty inputs");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += brier(p[i], y[i]);
  return s / static_cast<double>(p.size());
}

SeedRiskTable seed_risk(std::span<const RoutingExample> examples, std::span<const double> p, const CostSpec& costs) {
  if (examples.size() != p.size()) throw std::invalid_argument("seed_risk needs one probability per example");
  std::map<std::uint64_t, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    auto& [sum, n] = acc[examples[i].seed_id];
    sum += route_surrogate(p[i], examples[i].label, costs);
    ++n;
  }
  SeedRiskTable t;
  for (const auto& [id, sn] : acc) {
    if (sn.second == 0) {
      ++t.excluded;
      continue;
    }
    t.risk[id] = sn.first / static_cast<double>(sn.second);
  }
  return t;
}

namespace {
std::size_t tail_count(std::size_t n, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("CVaR alpha must be in (0,1]");
  const auto m = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(m, 1, n);
}
}  // namespace

double cvar(std::span<const double> values, double alpha) {
  if (values.empty()) throw std::invalid_argument("CVaR of an empty list");
  std::vector<double> v(values.begin(), values.end());
  const std::size_t m = tail_count(v.size(), alpha);
  std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end(), std::greater<>());
  return std::accumulate(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), 0.0) / static_cast<double>(m);
}

std::vector<std::size_t> cvar_tail(std::span<const double> values, std::span<const std::uint64_t> ids, double alpha) {
  if (values.empty() || values.size() != ids.size()) throw std::invalid_argument("CVaR tail needs aligned values");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t m = tail_count(values.size(), alpha);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (values[a] != values[b]) return values[a] > values[b];
                      return ids[a] < ids[b];
                    });
  order.resize(m);
  return order;
}

void TrainSpec::validate() const {
  if (!(lr > 0.0) || !(dual_lr > 0.0)) throw ConfigError("router learning rates must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("router.weight_decay must be nonnegative");
  if (epochs < 0) throw ConfigError("router.epochs must be nonnegative");
  if (batch_steps == 0) throw ConfigError("router.batch_steps must be positive");
  costs.validate();
  cvar.validate();
}

BatchObjective lagrangian(const Eigen::VectorXd& logits, double temperature, std::span<const int> labels,
                          std::span<const std::uint64_t> seed_ids, double lambda, const TrainSpec& spec) {
  const auto n = static_cast<std::size_t>(logits.size());
  if (labels.size() != n || seed_ids.size() != n || n == 0) throw std::invalid_argument("misaligned batch");
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = sigmoid(logits(static_cast<Eigen::Index>(i)) / temperature);

  std::map<std::uint64_t, std::size_t> slot_of;
  for (std::uint64_t id : seed_ids) slot_of.emplace(id, 0);
  std::vector<std::uint64_t> ids;
  for (auto& [id, s] : slot_of) {
    s = ids.size();
    ids.push_back(id);
  }
  std::vector<double> sum(ids.size(), 0.0);
  std::vector<std::size_t> count(ids.size(), 0);
  std::vector<std::size_t> slot(n);
  for (std::size_t i = 0; i < n; ++i) {
    slot[i] = slot_of[seed_ids[i]];
    sum[slot[i]] += route_surrogate(p[i], labels[i], spec.costs);
    ++count[slot[i]];
  }
  std::vector<double> risk(ids.size());
  for (std::size_t s = 0; s < ids.size(); ++s) risk[s] = sum[s] / static_cast<double>(count[s]);
  const auto tail = cvar_tail(risk, ids, spec.cvar.alpha);
  std::vector<double> tail_weight(ids.size(), 0.0);
  double cv = 0.0;
  for (std::size_t s : tail) {
    tail_weight[s] = 1.0 / static_cast<double>(tail.size());
    cv += risk[s];
  }
  cv /= static_cast<double>(tail.size());

  BatchObjective out;
  out.mean_risk = std::accumulate(risk.begin(), risk.end(), 0.0) / static_cast<double>(risk.size());
  out.cvar = cv;
  out.brier = 0.0;
  for (std::size_t i = 0; i < n; ++i) out.brier += brier(p[i], labels[i]);
  out.brier /= static_cast<double>(n);
  const double lb = spec.cvar.lambda_brier;
  out.loss = out.mean_risk + lambda * (cv - spec.cvar.epsilon) + lb * out.brier;

  out.dlogit.resize(static_cast<Eigen::Index>(n));
  const double inv_s = 1.0 / static_cast<double>(ids.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t s = slot[i];
    const double dr = route_surrogate_slope(labels[i], spec.costs) / static_cast<double>(count[s]);
    const double dp = dr * (inv_s + lambda * tail_weight[s]) + lb * 2.0 * (p[i] - labels[i]) / static_cast<double>(n);
    out.dlogit(static_cast<Eigen::Index>(i)) = dp * p[i] * (1.0 - p[i]) / temperature;
  }
  return out;
}

namespace {

struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  long step = 0;
  explicit Adam(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
  /// Returns the bias-corrected direction for coordinate i after update().
  void update(std::span<const double> g) {
    ++step;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = beta1 * m[i] + (1 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1 - beta2) * g[i] * g[i];
    }
  }
  double direction(std::size_t i) const {
    const double mh = m[i] / (1 - std::pow(beta1, static_cast<double>(step)));
    const double vh = v[i] / (1 - std::pow(beta2, static_cast<double>(step)));
    return mh / (std::sqrt(vh) + eps);
  }
};

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::vector<std::size_t>>& seeds,
                                                   std::size_t batch_steps, Rng& rng) {
  std::vector<std::size_t> order(seeds.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> cur;
  for (std::size_t s : order) {
    cur.insert(cur.end(), seeds[s].begin(), seeds[s].end());
    if (cur.size() >= batch_steps) {
      batches.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) batches.push_back(std::move(cur));
  return batches;
}

}  // namespace

TrainResult train_router(std::span<const RoutingExample> data, const TrainSpec& spec) {
  spec.validate();
  std::map<std::uint64_t, std::vector<std::size_t>> by_seed;
  bool pos = false, neg = false;
  for (std::size_t i = 0; i < data.size(); ++i) {
    by_seed[data[i].seed_id].push_back(i);
    (data[i].label ? pos : neg) = true;
  }
  if (by_seed.size() < 2) throw std::invalid_argument("router training needs at least two seeds");
  if (!pos || !neg) throw std::invalid_argument("router training needs both labels present");
  std::vector<std::vector<std::size_t>> seeds;
  for (auto& [id, idx] : by_seed) seeds.push_back(std::move(idx));

  Rng rng(hash_keys({spec.seed, 0x2007E2ULL}));
  RouterNet net(spec.dropout);
  net.initialize(rng);
  Adam primal(net.parameter_count());
  Adam dual(1);
  double log_lambda = std::log(std::max(spec.cvar.lambda_init, 1e-12));

  TrainResult out{net, {}, {}};
  const std::size_t per_epoch = (data.size() + spec.batch_steps - 1) / spec.batch_steps;
  const double total = static_cast<double>(std::max<std::size_t>(1, per_epoch * static_cast<std::size_t>(spec.epochs)));
  std::size_t step = 0;
  ParamVector grad;
  RouterNet::TrainPass pass;

  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    const auto batches = make_batches(seeds, spec.batch_steps, rng);
    double acc_risk = 0.0, acc_cvar = 0.0, acc_brier = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& idx = batches[b];
      std::vector<RiskFeatures> bf(idx.size());
      std::vector<int> by(idx.size());
      std::vector<std::uint64_t> bid(idx.size());
      for (std::size_t j = 0; j < idx.size(); ++j) {
        bf[j] = data[idx[j]].features;
        by[j] = data[idx[j]].label;
        bid[j] = data[idx[j]].seed_id;
      }
      const double lambda = std::exp(log_lambda);
      const Eigen::VectorXd z = net.forward_train(to_batch(bf), hash_keys({spec.seed, 0xD5ULL, step}), pass);
      const BatchObjective obj = lagrangian(z, 1.0, by, bid, lambda, spec);
      net.backward(pass, obj.dlogit, grad);
      const auto w = static_cast<double>(idx.size());
      acc_risk += w * obj.mean_risk;
      acc_cvar += w * obj.cvar;
      acc_brier += w * obj.brier;

      const double progress = std::min(1.0, static_cast<double>(step) / total);
      const double lr = spec.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
      primal.update(grad);
      auto& params = net.mutable_params();
      for (std::size_t i = 0; i < params.size(); ++i) {
        params[i] -= lr * spec.weight_decay * params[i];
        params[i] -= lr * primal.direction(i);
      }
      net.update_running_stats(pass);

      const double g_dual = lambda * (obj.cvar - spec.cvar.epsilon);
      dual.update(std::span<const double>(&g_dual, 1));
      log_lambda += spec.dual_lr * dual.direction(0);
      out.lambda_trace.push_back(std::exp(log_lambda));
      ++step;
    }

    EpochReport rep;
    rep.epoch = epoch + 1;
    rep.mean_risk = acc_risk / static_cast<double>(data.size());
    rep.cvar = acc_cvar / static_cast<double>(data.size());
    rep.brier = acc_brier / static_cast<double>(data.size());
    rep.lambda = std::exp(log_lambda);
    out.report.push_back(rep);
  }
  out.net = std::move(net);
  return out;
}

void write_report_csv(const std::filesystem::path& path, const std::vector<EpochReport>& report) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.precision(17);
  f << "epoch,mean_risk,cvar,brier,lambda\n";
  for (const auto& r : report) f << r.epoch << ',' << r.mean_risk << ',' << r.cvar << ',' << r.brier << ',' << r.lambda << '\n';
}

namespace {

double logit_nll(std::span<const double> z, std::span<const int> y, double t) {
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double u = y[i] ? -z[i] / t : z[i] / t;
    s += u > 0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
  }
  return s / static_cast<double>(z.size());
}

std::vector<double> probs_at(std::span<const double> z, double t) {
  std::vector<double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) p[i] = sigmoid(z[i] / t);
  return p;
}

}  // namespace

TemperatureFit fit_temperature_logits(std::span<const double> logits, std::span<const int> labels) {
  if (logits.empty() || logits.size() != labels.size())
    throw std::invalid_argument("temperature fit needs aligned nonempty validation data");
  TemperatureFit fit;
  const auto pos = std::count_if(labels.begin(), labels.end(), [](int v) { return v != 0; });
  fit.nll_before = logit_nll(logits, labels, 1.0);
  fit.ece_before = ece(probs_at(logits, 1.0), labels);
  if (pos == 0 || static_cast<std::size_t>(pos) == labels.size()) {
    fit.degenerate = true;
    fit.nll_after = fit.nll_before;
    fit.ece_after = fit.ece_before;
    return fit;
  }
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = -3.0, b = 3.0;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = logit_nll(logits, labels, std::exp(c)), fd = logit_nll(logits, labels, std::exp(d));
  for (int it = 0; it < 100 && b - a > 1e-10; ++it) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = logit_nll(logits, labels, std::exp(c));
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = logit_nll(logits, labels, std::exp(d));
    }
  }
  fit.temperature = std::exp(0.5 * (a + b));
  fit.nll_after = logit_nll(logits, labels, fit.temperature);
  fit.ece_after = ece(probs_at(logits, fit.temperature), labels);
  if (fit.ece_after > fit.ece_before + 0.005) {
    fit.guarded = true;
    fit.temperature = 1.0;
    fit.nll_after = fit.nll_before;
    fit.ece_after = fit.ece_before;
  }
  return fit;
}

TemperatureFit fit_temperature(RouterNet& net, std::span<const RoutingExample> validation) {
  std::vector<RiskFeatures> f;
  std::vector<int> y;
  for (const auto& e : validation) {
    f.push_back(e.features);
    y.push_back(e.label);
  }
  const Eigen::VectorXd z = net.logits(to_batch(f));
  const std::vector<double> zv(z.data(), z.data() + z.size());
  TemperatureFit fit = fit_temperature_logits(zv, y);
  net.set_temperature(fit.temperature);
  return fit;
}

double bayes_threshold(const CostSpec& costs) {
  if (!(costs.kappa > 0.0)) throw std::invalid_argument("kappa must be positive");
  return std::clamp((costs.c_llm - costs.c_slm) / costs.kappa, 0.0, 1.0);
}

SweepResult sweep_threshold(std::span<const double> scores, std::span<const int> labels, const CostSpec& costs,
                            bool escalate_below) {
  if (scores.empty() || scores.size() != labels.size()) throw std::invalid_argument("sweep needs aligned data");
  SweepResult best;
  best.cost = std::numeric_limits<double>::infinity();
  for (int i = 0; i < kSweepGridSize; ++i) {
    const double tau = sweep_grid(i);
    double cost = 0.0;
    std::size_t esc = 0;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      const bool d = escalate_below ? scores[j] < tau : escalate(scores[j], tau);
      esc += d;
      cost += route_surrogate(d ? 1.0 : 0.0, labels[j], costs);
    }
    cost /= static_cast<double>(scores.size());
    // ties resolve toward the SLM side of the grid
    if (cost < best.cost || (cost == best.cost && !escalate_below)) {
      best.threshold = tau;
      best.cost = cost;
      best.escalation_rate = static_cast<double>(esc) / static_cast<double>(scores.size());
    }
  }
  return best;
}

double select_threshold(const RouterNet& net, std::span<const RoutingExample> validation, const CostSpec& costs,
                        ThresholdMode mode) {
  if (mode == ThresholdMode::Bayes) return bayes_threshold(costs);
  std::vector<RiskFeatures> f;
  std::vector<int> y;
  for (const auto& e : validation) {
    f.push_back(e.features);
    y.push_back(e.label);
  }
  return sweep_threshold(net.predict(f), y, costs).threshold;
}

namespace {
constexpr char kRouterMagic[8] = {'R', 'R', 'N', 'E', 'T', '0', '0', '1'};

template <class T>
void put(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw std::runtime_error("truncated router checkpoint");
  return v;
}
}  // namespace

void save_router(const std::filesystem::path& path, const RouterModel& model, const std::string& config_hash) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(kRouterMagic, sizeof(kRouterMagic));
  const RouterNet& net = model.net;
  put<std::uint64_t>(f, net.parameter_count());
  for (double v : net.params()) put(f, v);
  for (int layer = 0; layer < 2; ++layer) {
    for (double v : net.running_mean(layer)) put(f, v);
    for (double v : net.running_var(layer)) put(f, v);
  }
  put(f, net.dropout());
  put(f, net.temperature());
  put(f, model.threshold);
  put<std::uint64_t>(f, config_hash.size());
  f.write(config_hash.data(), static_cast<std::streamsize>(config_hash.size()));
}

RouterModel load_router(const std::filesystem::path& path, std::string* config_hash_out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || !std::equal(magic, magic + 8, kRouterMagic)) throw std::runtime_error("not a router checkpoint");
  RouterModel m{RouterNet(), 0.5};
  const auto n = get<std::uint64_t>(f);
  if (n != m.net.parameter_count()) throw std::runtime_error("router checkpoint shape mismatch");
  auto& params = m.net.mutable_params();
  for (auto& v : params) v = get<double>(f);
  for (int layer = 0; layer < 2; ++layer) {
    const int w = layer == 0 ? RouterNet::kHidden1 : RouterNet::kHidden2;
    Eigen::VectorXd mean(w), var(w);
    for (int i = 0; i < w; ++i) mean(i) = get<double>(f);
    for (int i = 0; i < w; ++i) var(i) = get<double>(f);
    m.net.set_running_stats(layer, std::move(mean), std::move(var));
  }
  const double dropout = get<double>(f);
  RouterNet shaped(dropout);
  shaped.mutable_params() = m.net.mutable_params();
  for (int layer = 0; layer < 2; ++layer) shaped.set_running_stats(layer, m.net.running_mean(layer), m.net.running_var(layer));
  shaped.set_temperature(get<double>(f));
  m.net = std::move(shaped);
  m.threshold = get<double>(f);
  const auto len = get<std::uint64_t>(f);
  std::string hash(len, '\0');
  f.read(hash.data(), static_cast<std::streamsize>(len));
  if (!f) throw std::runtime_error("truncated router checkpoint");
  if (config_hash_out) *config_hash_out = std::move(hash);
  return m;
}

}  // namespace riskroute

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "riskroute/router.hpp"
#include "riskroute/theory.hpp"

using namespace riskroute;

namespace {

const CostSpec kUnitCosts{1.0, 50.0, 98.0};

std::vector<RoutingExample> two_label_set(int seeds, int steps, std::uint64_t key) {
  Rng rng(key);
  std::vector<RoutingExample> out;
  for (int s = 0; s < seeds; ++s) {
    const double d = rng.uniform();
    const int y = rng.bernoulli(d);
    for (int t = 0; t < steps; ++t) {
      RoutingExample e;
      e.seed_id = static_cast<std::uint64_t>(s);
      e.step_index = t;
      e.label = y;
      e.features[0] = d;
      for (std::size_t i = 1; i < kFeatureDim; ++i) e.features[i] = rng.uniform();
      out.push_back(e);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("route surrogate") {
  CHECK(route_surrogate(0.0, 0, kUnitCosts) == 1.0);
  CHECK(route_surrogate(1.0, 0, kUnitCosts) == 50.0);
  CHECK(route_surrogate(1.0, 1, kUnitCosts) == 50.0);
  CHECK(route_surrogate(0.5, 1, kUnitCosts) == doctest::Approx(74.5));
  CHECK(route_surrogate_slope(1, kUnitCosts) == doctest::Approx(-49.0));
}

TEST_CASE("brier") {
  CHECK(brier(1.0, 1) == 0.0);
  CHECK(brier(0.0, 0) == 0.0);
  CHECK(brier(0.5, 0) == 0.25);
  CHECK(brier(0.5, 1) == 0.25);
  // constant predictor: minimizer is the label mean
  std::vector<int> y(1000);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 10 < 3;
  double best = 0.0, best_loss = INFINITY;
  for (int i = 0; i <= 1000; ++i) {
    const std::vector<double> p(y.size(), i / 1000.0);
    const double l = mean_brier(p, y);
    if (l < best_loss) {
      best_loss = l;
      best = i / 1000.0;
    }
  }
  CHECK(best == doctest::Approx(0.3));
}

TEST_CASE("seed risk") {
  const CostSpec c;
  RoutingExample e;
  e.seed_id = 1;
  std::vector<RoutingExample> one = {e};
  std::vector<double> p1 = {1.0};
  CHECK(seed_risk(one, p1, c).risk.at(1) == doctest::Approx(c.c_llm));

  std::vector<RoutingExample> ex;
  std::vector<double> p;
  auto add = [&](std::uint64_t seed, double prob, int y) {
    RoutingExample r;
    r.seed_id = seed;
    r.label = y;
    ex.push_back(r);
    p.push_back(prob);
  };
  add(1, 0.0, 0);
  add(1, 1.0, 1);
  add(2, 0.5, 1);
  add(3, 0.2, 0);
  add(3, 0.4, 0);
  add(3, 0.6, 1);
  const auto t = seed_risk(ex, p, kUnitCosts);
  CHECK(t.risk.size() == 3);
  CHECK(t.risk.at(1) == doctest::Approx((1.0 + 50.0) / 2));
  CHECK(t.risk.at(2) == doctest::Approx(74.5));
  const double s3 = (0.8 + 10.0) + (0.6 + 20.0) + (0.4 + 30.0 + 98.0 * 0.4);
  CHECK(t.risk.at(3) == doctest::Approx(s3 / 3));

  auto dup = ex;
  auto pd = p;
  dup.insert(dup.end(), ex.begin(), ex.end());
  pd.insert(pd.end(), p.begin(), p.end());
  const auto t2 = seed_risk(dup, pd, kUnitCosts);
  for (const auto& [id, r] : t.risk) CHECK(t2.risk.at(id) == doctest::Approx(r));
}

TEST_CASE("cvar") {
  std::vector<double> v = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  CHECK(cvar(v, 0.2) == doctest::Approx(9.5));
  CHECK(cvar(v, 1.0) == doctest::Approx(5.5));
  CHECK_THROWS(cvar(std::vector<double>{}, 0.2));
  CHECK_THROWS(cvar(v, 0.0));

  // Rockafellar-Uryasev form: grid, then ternary refinement
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> r(100);
    for (double& x : r) x = rng.normal() * 2 + 1;
    const double alpha = 0.3;
    auto ru = [&](double nu) {
      double s = 0;
      for (double x : r) s += std::max(0.0, x - nu);
      return nu + s / (alpha * static_cast<double>(r.size()));
    };
    const auto [lo, hi] = std::minmax_element(r.begin(), r.end());
    double best = *lo;
    for (int i = 0; i <= 2000; ++i) {
      const double nu = *lo + (*hi - *lo) * i / 2000.0;
      if (ru(nu) < ru(best)) best = nu;
    }
    const double step = (*hi - *lo) / 2000.0;
    double a = best - step, b = best + step;
    for (int it = 0; it < 200; ++it) {
      const double c = a + (b - a) / 3, d = b - (b - a) / 3;
      if (ru(c) <= ru(d)) b = d;
      else a = c;
    }
    CHECK(std::abs(cvar(r, alpha) - ru(0.5 * (a + b))) < 1e-6);
  }
}

TEST_CASE("cvar tail breaks ties by id") {
  const std::vector<double> v = {5, 7, 7, 1};
  const std::vector<std::uint64_t> ids = {10, 30, 20, 40};
  const auto tail = cvar_tail(v, ids, 0.25);
  REQUIRE(tail.size() == 1);
  CHECK(tail[0] == 2);
}

TEST_CASE("bayes threshold") {
  CHECK(bayes_threshold(kUnitCosts) == doctest::Approx(0.5));
  CHECK(bayes_threshold({50.0, 50.0, 98.0}) == 0.0);
  CHECK(bayes_threshold({60.0, 50.0, 98.0}) == 0.0);
  CHECK(bayes_threshold({1.0, 50.0, 10.0}) == 1.0);
  CHECK(bayes_threshold(CostSpec{}) == doctest::Approx(0.5));
}

TEST_CASE("forward pass") {
  RouterNet net;
  std::fill(net.mutable_params().begin(), net.mutable_params().end(), 0.0);
  RiskFeatures f;
  for (std::size_t i = 0; i < kFeatureDim; ++i) f[i] = 0.1 * static_cast<double>(i);
  CHECK(net.predict(f) == 0.5);

  RouterNet r;
  Rng rng(1);
  r.initialize(rng);
  const double p = r.predict(f);
  CHECK(p > 0.0);
  CHECK(p < 1.0);
  CHECK(r.predict(f) == p);
  r.set_temperature(1e9);
  CHECK(std::abs(r.predict(f) - 0.5) < 1e-6);
  CHECK_THROWS(r.set_temperature(0.0));

  f[3] = std::nan("");
  CHECK_THROWS(r.predict(f));
}

TEST_CASE("train-mode forward is keyed by the dropout seed") {
  RouterNet net;
  Rng rng(2);
  net.initialize(rng);
  const auto data = two_label_set(20, 4, 9);
  std::vector<RiskFeatures> fs;
  for (const auto& e : data) fs.push_back(e.features);
  RouterNet::TrainPass a, b;
  const auto za = net.forward_train(to_batch(fs), 42, a);
  const auto zb = net.forward_train(to_batch(fs), 42, b);
  CHECK(za == zb);
  const auto zc = net.forward_train(to_batch(fs), 43, b);
  CHECK_FALSE(za == zc);
}

TEST_CASE("analytic gradients match finite differences") {
  const auto g = gradient_errors(2, 77);
  CHECK(g.bc < 1e-5);
  CHECK(g.dpo < 1e-5);
  CHECK(g.consistency < 1e-5);
  CHECK(g.router < 1e-5);
}

TEST_CASE("training rejects degenerate data") {
  auto data = two_label_set(30, 3, 1);
  for (auto& e : data) e.label = 0;
  CHECK_THROWS(train_router(data, TrainSpec{}));
  auto one_seed = two_label_set(1, 10, 1);
  one_seed[0].label = 1 - one_seed[0].label;
  CHECK_THROWS(train_router(one_seed, TrainSpec{}));
}

TEST_CASE("zero epsilon drives lambda up") {
  const auto data = two_label_set(300, 5, 4);
  TrainSpec spec;
  spec.cvar.epsilon = 0.0;
  spec.epochs = 8;
  const auto res = train_router(data, spec);
  REQUIRE(res.report.size() == 8);
  double prev = spec.cvar.lambda_init;
  for (const auto& r : res.report) {
    CHECK(r.lambda > prev);
    prev = r.lambda;
  }
}

TEST_CASE("huge epsilon lets lambda decay") {
  const auto data = two_label_set(300, 5, 4);
  TrainSpec spec;
  spec.cvar.epsilon = 1e6;
  spec.epochs = 8;
  const auto res = train_router(data, spec);
  double prev = spec.cvar.lambda_init;
  for (double l : res.lambda_trace) {
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("training is deterministic") {
  const auto data = two_label_set(100, 5, 4);
  TrainSpec spec;
  spec.epochs = 3;
  const auto a = train_router(data, spec);
  const auto b = train_router(data, spec);
  CHECK(a.net == b.net);
  CHECK(a.lambda_trace == b.lambda_trace);
}

TEST_CASE("temperature fitting") {
  Rng rng(12);
  std::vector<double> z(40000), z5(z.size());
  std::vector<int> y(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = 2.0 * rng.normal();
    y[i] = rng.bernoulli(sigmoid(z[i]));
    z5[i] = 5.0 * z[i];
  }
  const auto calibrated = fit_temperature_logits(z, y);
  CHECK(std::abs(calibrated.temperature - 1.0) < 0.05);
  const auto over = fit_temperature_logits(z5, y);
  CHECK(std::abs(over.temperature - 5.0) < 0.5);
  CHECK(over.nll_after < over.nll_before);

  std::vector<int> zeros(z.size(), 0);
  const auto degenerate = fit_temperature_logits(z5, zeros);
  CHECK(degenerate.temperature == 1.0);
  CHECK(degenerate.degenerate);
}

TEST_CASE("threshold sweep") {
  const CostSpec c;
  SUBCASE("calibrated scores land near the Bayes threshold") {
    Rng rng(21);
    std::vector<double> p(200000);
    std::vector<int> y(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = rng.uniform();
      y[i] = rng.bernoulli(p[i]);
    }
    CHECK(std::abs(sweep_threshold(p, y, c).threshold - bayes_threshold(c)) <= 0.05);
  }
  SUBCASE("no failures means never escalate") {
    Rng rng(22);
    std::vector<double> p(1000);
    for (double& v : p) v = 0.98 * rng.uniform();
    const std::vector<int> y(p.size(), 0);
    const auto r = sweep_threshold(p, y, c);
    CHECK(r.threshold == doctest::Approx(0.99));
    CHECK(r.escalation_rate == 0.0);
  }
  SUBCASE("escalate-below ties keep the lowest tau") {
    const std::vector<double> s = {0.95, 0.97, 0.99};
    const std::vector<int> y(3, 0);
    CHECK(sweep_threshold(s, y, c, true).threshold == doctest::Approx(0.01));
  }
  SUBCASE("bayes mode ignores the data") {
    RouterNet net;
    const auto valid = two_label_set(5, 2, 3);
    CHECK(select_threshold(net, valid, kUnitCosts, ThresholdMode::Bayes) == doctest::Approx(0.5));
  }
}

TEST_CASE("router checkpoint round trip") {
  RouterModel m;
  Rng rng(6);
  m.net.initialize(rng);
  m.net.set_temperature(1.7);
  m.threshold = 0.42;
  const auto path = std::filesystem::temp_directory_path() / "riskroute_router_test.bin";
  save_router(path, m, "cafe");
  std::string hash;
  const auto back = load_router(path, &hash);
  CHECK(back.net == m.net);
  CHECK(back.threshold == m.threshold);
  CHECK(back.net.temperature() == 1.7);
  CHECK(hash == "cafe");
  std::filesystem::remove(path);
}

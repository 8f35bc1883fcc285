#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdio>

#include "dabtps/mlp.hpp"
#include "dabtps/rng.hpp"
#include "dabtps/text_io.hpp"
#include "test_support.hpp"

using namespace dabtps;

namespace {

// reference forward that also records hidden pre-activations, used to keep
// finite-difference probes away from rectifier kinks
void ref_forward(const MlpModel& m, const double* in, std::vector<double>& act,
                 std::vector<double>& preacts) {
  act.assign(in, in + m.dims.front());
  preacts.clear();
  for (int l = 0; l < m.n_layers(); ++l) {
    const int rows = m.dims[std::size_t(l) + 1];
    const int cols = m.dims[std::size_t(l)];
    std::vector<double> next(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
      double z = m.b[std::size_t(l)][std::size_t(r)];
      for (int c = 0; c < cols; ++c)
        z += m.w[std::size_t(l)][std::size_t(r) * cols + c] * act[std::size_t(c)];
      if (l + 1 < m.n_layers()) preacts.push_back(z);
      next[std::size_t(r)] = (l + 1 < m.n_layers() && z < 0.0) ? 0.0 : z;
    }
    act = std::move(next);
  }
}

double batch_loss(const MlpModel& m, const NormalizedBatch& b, double l2) {
  return compute_gradients(m, b, l2).loss;
}

MlpModel random_micro_model(Rng& rng) {
  std::vector<int> dims{4};
  const int hidden = 1 + int(rng.below(2));
  for (int i = 0; i < hidden; ++i) dims.push_back(2 + int(rng.below(4)));
  dims.push_back(1);
  auto m = make_mlp(dims, rng.next_u64());
  for (auto& layer : m.b)
    for (auto& v : layer) v = rng.uniform(-0.3, 0.3);
  return m;
}

RegressionData synthetic_data(int n, std::uint64_t seed) {
  // smooth positive target over the design ranges
  RegressionData d;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const double p = rng.uniform(100.0, 1000.0);
    const double v2 = rng.uniform(160.0, 230.0);
    const double d1 = rng.uniform(0.1, 1.0);
    const double d2 = rng.uniform(0.1, 1.0);
    d.x.push_back({p, v2, d1, d2});
    d.y.push_back(1.0 + p / 200.0 + 0.02 * (v2 - 160.0) + 2.0 * d1 * d2);
  }
  return d;
}

}  // namespace

TEST_CASE("normalizer round trip and constant-feature guard") {
  const std::vector<double> vals{1.0, 10.0, 2.0, 10.0, 3.0, 10.0};
  const auto nm = fit_normalizer(vals, 2);
  CHECK(nm.lo[0] == 1.0);
  CHECK(nm.hi[0] == 3.0);
  CHECK(nm.lo[1] == 10.0);
  CHECK(nm.hi[1] == 11.0);  // constant feature widened to stay invertible
  for (double v : {1.0, 1.7, 3.0, -2.0, 8.5}) {
    CHECK(nm.denorm(nm.norm(v, 0), 0) ==
          doctest::Approx(v).epsilon(1e-12));
  }
}

TEST_CASE("all-zero weights make a constant network") {
  auto m = make_mlp({4, 3, 1}, 1);
  for (auto& layer : m.w) std::fill(layer.begin(), layer.end(), 0.0);
  m.b[1][0] = 0.7;
  CHECK(m.forward({100.0, 200.0, 0.5, 0.5}) == 0.7);
  CHECK(m.forward({900.0, 160.0, 0.1, 0.9}) == 0.7);
}

TEST_CASE("rectifier kills negative pre-activations") {
  auto m = make_mlp({4, 1, 1}, 1);
  m.w[0] = {1.0, 0.0, 0.0, 0.0};
  m.b[0] = {-0.5};
  m.w[1] = {5.0};
  m.b[1] = {0.25};
  // hidden unit sees x0 - 0.5: dead below 0.5, pass-through above
  CHECK(m.forward({0.3, 0.0, 0.0, 0.0}) == 0.25);
  CHECK(m.forward({0.7, 0.0, 0.0, 0.0}) ==
        doctest::Approx(0.25 + 5.0 * 0.2).epsilon(1e-12));
}

TEST_CASE("zero model on zero targets has zero loss and gradients") {
  auto m = make_mlp({4, 2, 1}, 3);
  for (auto& layer : m.w) std::fill(layer.begin(), layer.end(), 0.0);
  const double xs[8] = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  const double ys[2] = {0.0, 0.0};
  const auto g = compute_gradients(m, {xs, ys, 2}, 0.0);
  CHECK(g.loss == 0.0);
  for (const auto& layer : g.w)
    for (double v : layer) CHECK(v == 0.0);
  for (const auto& layer : g.b)
    for (double v : layer) CHECK(v == 0.0);
}

TEST_CASE("duplicating every batch row changes nothing") {
  Rng rng(555);
  auto m = random_micro_model(rng);
  std::vector<double> xs(8), ys(2);
  for (auto& v : xs) v = rng.uniform(0.0, 1.0);
  for (auto& v : ys) v = rng.uniform(0.0, 1.0);
  std::vector<double> xs2;
  std::vector<double> ys2;
  for (int rep = 0; rep < 2; ++rep) {
    xs2.insert(xs2.end(), xs.begin(), xs.end());
    ys2.insert(ys2.end(), ys.begin(), ys.end());
  }
  const auto g1 = compute_gradients(m, {xs.data(), ys.data(), 2}, 1e-5);
  const auto g2 = compute_gradients(m, {xs2.data(), ys2.data(), 4}, 1e-5);
  CHECK(g1.loss == doctest::Approx(g2.loss).epsilon(1e-12));
  for (std::size_t l = 0; l < g1.w.size(); ++l)
    for (std::size_t i = 0; i < g1.w[l].size(); ++i)
      CHECK(g1.w[l][i] == doctest::Approx(g2.w[l][i]).epsilon(1e-10));
}

TEST_CASE("weight penalty excludes biases") {
  auto m = make_mlp({4, 2, 1}, 9);
  for (auto& layer : m.w) std::fill(layer.begin(), layer.end(), 0.0);
  m.b[0] = {0.4, -0.2};
  m.b[1] = {0.9};
  const double xs[4] = {0.1, 0.2, 0.3, 0.4};
  const double ys[1] = {0.5};
  CHECK(batch_loss(m, {xs, ys, 1}, 0.0) ==
        doctest::Approx(batch_loss(m, {xs, ys, 1}, 1.0)).epsilon(1e-15));

  // and includes every weight: loss gap at l2=1 equals the squared sum
  Rng rng(10);
  auto m2 = random_micro_model(rng);
  double sq = 0.0;
  for (const auto& layer : m2.w)
    for (double v : layer) sq += v * v;
  const double gap =
      batch_loss(m2, {xs, ys, 1}, 1.0) - batch_loss(m2, {xs, ys, 1}, 0.0);
  CHECK(gap == doctest::Approx(sq).epsilon(1e-12));
}

TEST_CASE("gradients match central finite differences on 100 micro models") {
  Rng rng(20250);
  int models_checked = 0;
  int attempts = 0;
  while (models_checked < 100 && attempts < 400) {
    ++attempts;
    auto m = random_micro_model(rng);
    const int n = 2 + int(rng.below(5));
    std::vector<double> xs(std::size_t(n) * 4);
    std::vector<double> ys(static_cast<std::size_t>(n));
    for (auto& v : xs) v = rng.uniform(0.0, 1.0);
    for (auto& v : ys) v = rng.uniform(-0.5, 1.5);

    // keep every hidden pre-activation away from the rectifier kink so the
    // finite-difference probe stays on one side
    bool clean = true;
    std::vector<double> act, zs;
    for (int s = 0; s < n && clean; ++s) {
      ref_forward(m, xs.data() + std::size_t(s) * 4, act, zs);
      for (double z : zs)
        if (std::abs(z) < 1e-3) clean = false;
    }
    if (!clean) continue;

    const double l2 = rng.next_double() < 0.5 ? 0.0 : 1e-4;
    const NormalizedBatch batch{xs.data(), ys.data(), n};
    const auto g = compute_gradients(m, batch, l2);

    constexpr double h = 1e-5;
    auto check_param = [&](double& slot, double analytic) {
      const double keep = slot;
      slot = keep + h;
      const double up = batch_loss(m, batch, l2);
      slot = keep - h;
      const double dn = batch_loss(m, batch, l2);
      slot = keep;
      const double fd = (up - dn) / (2.0 * h);
      CHECK(std::abs(fd - analytic) <=
            std::max(1e-8, 1e-6 * std::abs(analytic)));
    };
    for (std::size_t l = 0; l < m.w.size(); ++l) {
      for (std::size_t i = 0; i < m.w[l].size(); ++i)
        check_param(m.w[l][i], g.w[l][i]);
      for (std::size_t i = 0; i < m.b[l].size(); ++i)
        check_param(m.b[l][i], g.b[l][i]);
    }
    ++models_checked;
  }
  CHECK(models_checked == 100);
}

TEST_CASE("training fits a constant target") {
  RegressionData data;
  Rng rng(77);
  for (int i = 0; i < 120; ++i) {
    data.x.push_back({rng.uniform(100.0, 1000.0), rng.uniform(160.0, 230.0),
                      rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)});
    data.y.push_back(5.0);
  }
  RegressionData val = data;
  val.x.resize(30);
  val.y.resize(30);

  auto m = make_mlp({4, 8, 1}, 42);
  TrainConfig cfg;
  cfg.max_epochs = 2500;  // the adaptive-subgradient step decays as 1/sqrt(t)
  cfg.batch_size = 24;
  cfg.patience = 2500;
  cfg.seed = 7;
  train(m, data, val, cfg);
  const auto dev = evaluate_deviation(m, val);
  CHECK(dev.avg_pct < 0.5);
}

TEST_CASE("full-batch training loss never increases") {
  const auto data = synthetic_data(100, 31);
  const auto val = synthetic_data(30, 32);
  auto m = make_mlp({4, 16, 1}, 5);
  TrainConfig cfg;
  cfg.max_epochs = 200;
  cfg.batch_size = 100;  // one batch per epoch
  cfg.patience = 200;
  cfg.seed = 11;
  const auto report = train(m, data, val, cfg);
  REQUIRE(report.epochs_run > 50);
  for (int e = 1; e < report.epochs_run; ++e) {
    const double prev = report.train_loss[std::size_t(e) - 1];
    CHECK(report.train_loss[std::size_t(e)] <= prev + 1e-12 * std::max(1.0, prev));
  }
}

TEST_CASE("training learns a smooth synthetic target") {
  const auto data = synthetic_data(600, 91);
  const auto val = synthetic_data(150, 92);
  auto m = make_mlp({4, 24, 8, 1}, 13);
  TrainConfig cfg;
  cfg.max_epochs = 4000;
  cfg.batch_size = 32;  // smaller batches buy more adaptive steps per epoch
  cfg.patience = 4000;
  cfg.seed = 21;
  train(m, data, val, cfg);
  const auto dev = evaluate_deviation(m, val);
  CHECK(dev.avg_pct < 2.5);
}

TEST_CASE("training is deterministic under the seed") {
  const auto data = synthetic_data(150, 51);
  const auto val = synthetic_data(40, 52);
  TrainConfig cfg;
  cfg.max_epochs = 40;
  cfg.batch_size = 32;
  cfg.seed = 3;

  auto m1 = make_mlp({4, 10, 1}, 8);
  auto m2 = make_mlp({4, 10, 1}, 8);
  const auto r1 = train(m1, data, val, cfg);
  const auto r2 = train(m2, data, val, cfg);
  REQUIRE(r1.epochs_run == r2.epochs_run);
  for (int e = 0; e < r1.epochs_run; ++e) {
    CHECK(std::bit_cast<std::uint64_t>(r1.train_loss[std::size_t(e)]) ==
          std::bit_cast<std::uint64_t>(r2.train_loss[std::size_t(e)]));
    CHECK(std::bit_cast<std::uint64_t>(r1.val_loss[std::size_t(e)]) ==
          std::bit_cast<std::uint64_t>(r2.val_loss[std::size_t(e)]));
  }
  for (std::size_t l = 0; l < m1.w.size(); ++l)
    CHECK(m1.w[l] == m2.w[l]);
}

TEST_CASE("exploding learning rate raises divergence") {
  const auto data = synthetic_data(60, 61);
  const auto val = synthetic_data(20, 62);
  auto m = make_mlp({4, 8, 1}, 2);
  TrainConfig cfg;
  // the adaptive accumulator bounds each step near learning_rate, so the
  // rate itself must be large enough to push activations past the double
  // range before the loss turns non-finite
  cfg.learning_rate = 1e200;
  cfg.max_epochs = 50;
  cfg.batch_size = 16;
  cfg.seed = 4;
  CHECK_THROWS_AS(train(m, data, val, cfg), DivergenceDetected);
}

TEST_CASE("early stopping halts once validation turns") {
  // few noisy training rows against a clean validation set: the net
  // overfits the noise and validation loss bottoms out
  auto data = synthetic_data(8, 71);
  for (std::size_t i = 0; i < data.y.size(); ++i)
    data.y[i] *= 1.0 + 0.4 * std::sin(13.0 * double(i + 1));
  const auto val = synthetic_data(30, 72);
  auto m = make_mlp({4, 16, 1}, 6);
  TrainConfig cfg;
  cfg.max_epochs = 4000;
  cfg.batch_size = 8;
  cfg.patience = 25;
  cfg.seed = 5;
  const auto report = train(m, data, val, cfg);
  CHECK(report.epochs_run < cfg.max_epochs);
  CHECK(report.epochs_run - 1 - report.best_epoch >= cfg.patience);
  // and the returned model carries the best-validation parameters
  double probe;
  const double x[4] = {0.5, 0.5, 0.5, 0.5};
  m.forward_normalized(x, &probe);
  CHECK(std::isfinite(probe));
}

TEST_CASE("deviation metric arithmetic") {
  auto m = make_mlp({4, 1, 1}, 1);
  for (auto& layer : m.w) std::fill(layer.begin(), layer.end(), 0.0);
  m.b[1][0] = 2.1;
  RegressionData d;
  d.x.push_back({0.0, 0.0, 0.0, 0.0});
  d.y.push_back(2.0);  // prediction 2.1 -> 5%
  const auto dev = evaluate_deviation(m, d);
  CHECK(dev.avg_pct == doctest::Approx(5.0).epsilon(1e-9));
  CHECK(dev.max_pct == doctest::Approx(5.0).epsilon(1e-9));

  d.y[0] = -1.0;
  CHECK_THROWS_AS(evaluate_deviation(m, d), std::invalid_argument);
}

TEST_CASE("model file round trip is bit-exact") {
  Rng rng(2026);
  auto m = random_micro_model(rng);
  m.in_norm.lo = {100.0, 160.0, 0.0, 0.0};
  m.in_norm.hi = {1000.0, 230.0, 1.0, 1.0};
  m.out_norm.lo = {0.123456789012345};
  m.out_norm.hi = {17.857142857142858};
  m.out_transform = OutputTransform::log;

  const std::string path = "mlp_test_tmp/model.txt";
  save_model(path, m);
  const auto back = load_model(path);
  CHECK(back.dims == m.dims);
  CHECK(back.w == m.w);
  CHECK(back.b == m.b);
  CHECK(back.in_norm.lo == m.in_norm.lo);
  CHECK(back.in_norm.hi == m.in_norm.hi);
  CHECK(back.out_norm.lo == m.out_norm.lo);
  CHECK(back.out_norm.hi == m.out_norm.hi);
  CHECK(back.out_transform == OutputTransform::log);
  std::remove(path.c_str());
}

TEST_CASE("model loader rejects foreign files") {
  const std::string path = "mlp_test_tmp/bad.txt";
  write_text_file(path, "not-a-model v9\n");
  CHECK_THROWS_AS(load_model(path), std::runtime_error);

  // missing or unknown transform line
  write_text_file(path, "dabtps-mlp v1\ndims 4 2 1\nin_lo 0 0 0 0\n");
  CHECK_THROWS_AS(load_model(path), std::runtime_error);
  write_text_file(path, "dabtps-mlp v1\ndims 4 2 1\ntransform sqrt\n");
  CHECK_THROWS_AS(load_model(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("log output transform undoes itself in forward") {
  auto m = make_mlp({4, 3, 1}, 9);
  for (auto& layer : m.w) std::fill(layer.begin(), layer.end(), 0.0);
  m.out_norm.lo = {1.5};
  m.out_norm.hi = {2.5};
  const std::array<double, 4> x{500.0, 200.0, 0.5, 0.5};

  // zero weights pin the normalized output at 0, so denorm gives lo
  m.out_transform = OutputTransform::linear;
  CHECK(m.forward(x) == doctest::Approx(1.5).epsilon(1e-12));
  m.out_transform = OutputTransform::log;
  CHECK(m.forward(x) == doctest::Approx(std::exp(1.5)).epsilon(1e-12));
}

TEST_CASE("log-target training needs positive targets") {
  auto data = synthetic_data(60, 61);
  data.y[10] = 0.0;
  auto val = synthetic_data(20, 62);
  auto m = make_mlp({4, 8, 1}, 3);
  TrainConfig cfg;
  cfg.max_epochs = 5;
  cfg.log_target = true;
  cfg.seed = 4;
  CHECK_THROWS_AS(train(m, data, val, cfg), std::invalid_argument);
}

TEST_CASE("log-target training buys relative accuracy on wide-range targets") {
  // targets spanning over a decade; the percentage deviation metric weighs
  // every sample the same, while absolute squared error all but ignores the
  // small-magnitude ones — the log view closes that gap
  RegressionData data;
  Rng rng(88);
  for (int i = 0; i < 400; ++i) {
    const double p = rng.uniform(100.0, 1000.0);
    const double v2 = rng.uniform(160.0, 230.0);
    const double d1 = rng.uniform(0.0, 1.0);
    const double d2 = rng.uniform(0.0, 1.0);
    data.x.push_back({p, v2, d1, d2});
    data.y.push_back(0.05 * std::exp(2.0 * (p / 1000.0) + 1.5 * d1 * d2));
  }
  RegressionData val;
  val.x.assign(data.x.begin(), data.x.begin() + 100);
  val.y.assign(data.y.begin(), data.y.begin() + 100);

  TrainConfig cfg;
  cfg.max_epochs = 4000;
  cfg.batch_size = 32;
  cfg.patience = 4000;
  cfg.seed = 23;

  auto linear = make_mlp({4, 24, 8, 1}, 17);
  train(linear, data, val, cfg);
  CHECK(linear.out_transform == OutputTransform::linear);
  const auto dev_linear = evaluate_deviation(linear, val);

  auto logged = make_mlp({4, 24, 8, 1}, 17);
  cfg.log_target = true;
  train(logged, data, val, cfg);
  CHECK(logged.out_transform == OutputTransform::log);
  const auto dev_log = evaluate_deviation(logged, val);

  CHECK(dev_log.avg_pct < dev_linear.avg_pct);
  CHECK(dev_log.avg_pct < 5.0);
}

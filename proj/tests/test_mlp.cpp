#include "mflow/error.hpp"
#include "mflow/gmm.hpp"
#include "mflow/harness.hpp"
#include "mflow/mlp.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

using namespace mflow;

namespace {

const std::string kFixture = std::string(MFLOW_SOURCE_DIR) + "/data/tree_mixture.json";

GaussianMixture single_gaussian(double mx, double my, double var) {
  Vec mu(2);
  mu << mx, my;
  return GaussianMixture({{1.0, mu, var * Mat::Identity(2, 2), 0}});
}

TrainBatch tiny_batch(std::uint64_t seed, int n, int n_classes) {
  TrainBatch b;
  b.x0.resize(2, n);
  b.x1.resize(2, n);
  b.t.resize(n);
  b.classes.resize(n);
  RandomStream rng(seed, StreamDomain::training, 999);
  for (int i = 0; i < n; ++i) {
    b.x0.col(i) << rng.normal(), rng.normal();
    b.x1.col(i) << 2.0 * rng.normal(), 1.0 + rng.normal();
    b.t[i] = rng.uniform();
    b.classes[i] = static_cast<int>(rng.below(n_classes + 1)) - 1;
  }
  return b;
}

// Central-difference gradient of the batch loss, relative agreement per coordinate.
double gradient_check(const MlpParams& p, const TrainBatch& batch) {
  const Vec flat = p.flatten();
  const Vec analytic = loss_and_grad(p, batch).grad.flatten();
  double worst = 0.0;
  MlpParams q = p;
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(flat[i]));
    Vec f = flat;
    f[i] += h;
    q.assign(f);
    const double up = loss_and_grad(q, batch).loss;
    f[i] -= 2.0 * h;
    q.assign(f);
    const double down = loss_and_grad(q, batch).loss;
    const double fd = (up - down) / (2.0 * h);
    const double rel = std::abs(fd - analytic[i]) / std::max(1e-3, std::abs(fd) + std::abs(analytic[i]));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace

TEST_SUITE("mlp") {

TEST_CASE("shapes, zero parameters and determinism") {
  const auto z = MlpParams::zeros(2, 8, 2);
  CHECK(z.parameter_count() == 8 * 5 + 8 + 8 * 3 + 64 + 8 + 16 + 2);
  Vec x(2);
  x << 0.4, -1.0;
  CHECK(mlp_forward(z, x, 0.3, 1).isZero());
  CHECK(mlp_forward(z, x, 0.3, std::nullopt).isZero());
  const auto a = MlpParams::random(2, 8, 2, 5);
  const auto b = MlpParams::random(2, 8, 2, 5);
  CHECK(a.flatten() == b.flatten());
  CHECK(mlp_forward(a, x, 0.3, 1) == mlp_forward(a, x, 0.3, 1));
  CHECK(mlp_forward(a, x, 0.3, 1) != mlp_forward(a, x, 0.3, 0));
  CHECK(MlpParams::random(2, 8, 2, 6).flatten() != a.flatten());
  MlpParams c = a;
  c.assign(a.flatten());
  CHECK(c.flatten() == a.flatten());
  CHECK_THROWS_AS(mlp_forward(a, x, 0.3, 2), Error);
  CHECK_THROWS_AS(mlp_forward(a, x, 1.3, 0), Error);
}

TEST_CASE("gradient matches finite differences") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto p = MlpParams::random(2, 6, 2, seed);
    CHECK(gradient_check(p, tiny_batch(seed, 4, 2)) < 1e-4);
  }
}

TEST_CASE("duplicating the batch leaves the loss and gradient unchanged") {
  const auto p = MlpParams::random(2, 6, 2, 4);
  const auto b = tiny_batch(4, 4, 2);
  TrainBatch d;
  d.x0.resize(2, 8);
  d.x1.resize(2, 8);
  d.t.resize(8);
  d.x0 << b.x0, b.x0;
  d.x1 << b.x1, b.x1;
  d.t << b.t, b.t;
  d.classes = b.classes;
  d.classes.insert(d.classes.end(), b.classes.begin(), b.classes.end());
  const auto one = loss_and_grad(p, b);
  const auto two = loss_and_grad(p, d);
  CHECK(two.loss == doctest::Approx(one.loss).epsilon(1e-13));
  CHECK((two.grad.flatten() - one.grad.flatten()).norm() <= 1e-12 * (1.0 + one.grad.flatten().norm()));
}

TEST_CASE("training bookkeeping") {
  const auto gmm = load_mixture(kFixture);
  TrainConfig cfg;
  cfg.hidden = 8;
  cfg.batch_size = 16;
  cfg.steps = 0;
  auto r = train(gmm, cfg);
  CHECK(r.loss_curve.empty());
  CHECK(r.params.flatten() == MlpParams::random(2, 8, 2, cfg.seed).flatten());
  CHECK(r.ema_params.flatten() == r.params.flatten());

  cfg.steps = 25;
  cfg.ema_decay = 0.0;
  r = train(gmm, cfg);
  CHECK(r.loss_curve.size() == 25);
  CHECK(r.ema_params.flatten() == r.params.flatten());
  const auto again = train(gmm, cfg);
  CHECK(again.params.flatten() == r.params.flatten());
  CHECK(again.loss_curve == r.loss_curve);

  cfg.learning_rate = 1e6;
  cfg.steps = 200;
  try {
    train(gmm, cfg);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::training_diverged);
  }
}

TEST_CASE("class dropout uses the unconditional column") {
  const auto gmm = load_mixture(kFixture);
  TrainConfig cfg;
  cfg.batch_size = 4000;
  cfg.p_drop = 0.25;
  const auto b = draw_batch(gmm, cfg, 0);
  const auto dropped = std::count(b.classes.begin(), b.classes.end(), -1);
  CHECK(std::abs(static_cast<double>(dropped) / 4000.0 - 0.25) < 0.03);
  cfg.p_drop = 0.0;
  const auto kept = draw_batch(gmm, cfg, 0);
  CHECK(std::count(kept.classes.begin(), kept.classes.end(), -1) == 0);
}

TEST_CASE("loss decreases on the fixture") {
  const auto gmm = load_mixture(kFixture);
  TrainConfig cfg;
  cfg.steps = 2000;
  const auto r = train(gmm, cfg);
  const auto mean_of = [&](std::size_t lo, std::size_t hi) {
    return std::accumulate(r.loss_curve.begin() + lo, r.loss_curve.begin() + hi, 0.0) / static_cast<double>(hi - lo);
  };
  CHECK(mean_of(1500, 2000) < 0.8 * mean_of(0, 100));
  CHECK(mean_of(1000, 1500) > mean_of(1500, 2000) * 0.95);
}

TEST_CASE("single Gaussian converges to the closed-form field") {
  const auto gmm = single_gaussian(1.0, -0.5, 0.25);
  TrainConfig cfg;
  cfg.steps = 10000;
  cfg.learning_rate = 0.02;
  cfg.hidden = 32;
  cfg.p_drop = 0.0;
  const auto r = train(gmm, cfg);
  const MlpField field(r.ema_params);
  double sq = 0.0;
  const auto probes = draw_probes(gmm, 400, 17, 0.05, 0.95);
  for (const auto& p : probes) sq += (field.evaluate(p.x, p.t, 0) - optimal_velocity(gmm, p.x, p.t, 0)).squaredNorm();
  const double rms = std::sqrt(sq / static_cast<double>(probes.size()));
  CHECK(rms < 0.1);
}

TEST_CASE("a briefly trained network gives an oversmoothed score") {
  const auto gmm = load_mixture(kFixture);
  TrainConfig cfg;
  cfg.steps = 2000;
  const auto r = train(gmm, cfg);
  // raw weights: after 2000 steps an EMA at 0.999 still carries the initialisation
  const MlpField field(r.params);
  const AnalyticField exact(gmm);
  const auto probes = draw_probes(gmm, 200, 23, 0.6, 0.9);
  std::vector<double> diff;
  for (const auto& p : probes) {
    const auto score = [&](const Vec& v) { return ((p.t * v - p.x) / (1.0 - p.t)).norm(); };
    diff.push_back(score(field.evaluate(p.x, p.t, std::nullopt)) - score(exact.evaluate(p.x, p.t, std::nullopt)));
  }
  const double n = static_cast<double>(diff.size());
  const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / n;
  double var = 0.0;
  for (double d : diff) var += (d - mean) * (d - mean);
  var /= n - 1.0;
  const double t_stat = mean / std::sqrt(var / n);
  CHECK(t_stat < -1.645);
}

TEST_CASE("checkpoint round trip") {
  const auto gmm = load_mixture(kFixture);
  TrainConfig cfg;
  cfg.hidden = 8;
  cfg.batch_size = 32;
  cfg.steps = 30;
  const auto r = train(gmm, cfg);
  const auto dir = std::filesystem::temp_directory_path() / "mflow_test_ckpt";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "ck.json").string();
  save_checkpoint(path, r, cfg);
  const auto ck = load_checkpoint(path);
  CHECK(ck.params.flatten() == r.params.flatten());
  CHECK(ck.ema_params.flatten() == r.ema_params.flatten());
  CHECK(ck.config.steps == 30);
  CHECK(ck.config.hidden == 8);
  try {
    load_checkpoint((dir / "missing.json").string());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::io);
  }
  {
    std::ofstream bad(dir / "bad.json");
    bad << "{\"format\": \"something-else\"}";
  }
  CHECK_THROWS_AS(load_checkpoint((dir / "bad.json").string()), Error);
  std::filesystem::remove_all(dir);
}

}

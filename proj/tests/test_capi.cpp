#include "mflow/mflow.h"

#include "mflow/gmm.hpp"
#include "mflow/guidance.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

namespace {

const std::string kSource = MFLOW_SOURCE_DIR;
const std::string kFixture = kSource + "/data/tree_mixture.json";

void collect(const char* line, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(line); }

}  // namespace

TEST_SUITE("capi") {

TEST_CASE("names and defaults") {
  CHECK(std::string(mflow_rng_name()) == "philox4x64-10");
  CHECK(std::string(mflow_status_name(MFLOW_ERR_POLE_AT_DATA)) == "pole-at-data");
  const auto g = mflow_guidance_default();
  CHECK(g.alpha == 0.0);
  CHECK(g.cfg_omega == 1.0);
  CHECK(g.mg_lo == 0.0);
  CHECK(g.mg_hi == 1.0);
  CHECK(g.auto_weight <= 0.0);
}

TEST_CASE("mixture handle and velocities agree with the C++ core") {
  mflow_mixture* m = nullptr;
  REQUIRE(mflow_mixture_load(kFixture.c_str(), &m) == MFLOW_OK);
  CHECK(mflow_mixture_dim(m) == 2);
  const auto gmm = mflow::load_mixture(kFixture);
  const double x[2] = {0.3, 1.2};
  double v[2];
  REQUIRE(mflow_optimal_velocity(m, x, 0.4, -1, v) == MFLOW_OK);
  const auto ref = mflow::optimal_velocity(gmm, Eigen::Map<const mflow::Vec>(x, 2), 0.4);
  CHECK(v[0] == ref[0]);
  CHECK(v[1] == ref[1]);
  REQUIRE(mflow_optimal_velocity(m, x, 0.4, 1, v) == MFLOW_OK);
  CHECK(v[0] == mflow::optimal_velocity(gmm, Eigen::Map<const mflow::Vec>(x, 2), 0.4, 1)[0]);
  REQUIRE(mflow_smoothed_velocity(m, x, 0.4, 0.1, 0, v) == MFLOW_OK);
  CHECK(v[1] == mflow::smoothed_velocity(gmm, Eigen::Map<const mflow::Vec>(x, 2), 0.4, 0.1, 0)[1]);
  double logp, score[2];
  REQUIRE(mflow_log_density_and_score(m, x, 0.4, &logp, score) == MFLOW_OK);
  CHECK(std::isfinite(logp));

  CHECK(mflow_optimal_velocity(m, x, 0.4, 7, v) != MFLOW_OK);
  CHECK(std::strlen(mflow_last_error()) > 0);
  CHECK(mflow_optimal_velocity(nullptr, x, 0.4, 0, v) == MFLOW_ERR_INVALID_ARGUMENT);
  mflow_mixture_free(m);
}

TEST_CASE("load failures map onto status codes") {
  mflow_mixture* m = nullptr;
  CHECK(mflow_mixture_load("/nonexistent/mixture.json", &m) != MFLOW_OK);
  CHECK(m == nullptr);
  CHECK(mflow_mixture_parse("{\"dim\": 2", &m) == MFLOW_ERR_CONFIG);
  CHECK(mflow_mixture_parse(R"({"dim": 1, "components": [{"weight": 0.5, "mean": [0], "cov": [[1]], "class": 0}]})",
                            &m) == MFLOW_ERR_CONFIG);
  REQUIRE(mflow_mixture_parse(R"({"dim": 1, "components": [{"weight": 1.0, "mean": [2], "cov": [[0]], "class": 0}]})",
                              &m) == MFLOW_OK);
  const double x = 0.5;
  double v;
  CHECK(mflow_optimal_velocity(m, &x, 1.0, 0, &v) == MFLOW_ERR_POLE_AT_DATA);
  mflow_mixture_free(m);
}

TEST_CASE("trajectory through the C API") {
  mflow_mixture* m = nullptr;
  REQUIRE(mflow_mixture_load(kFixture.c_str(), &m) == MFLOW_OK);
  const auto gmm = mflow::load_mixture(kFixture);
  auto g = mflow_guidance_default();
  g.alpha = 0.6;
  g.beta = 0.8;
  const double z0[2] = {0.1, -0.4};
  double end[2];
  long evals = 0;
  REQUIRE(mflow_sample_trajectory(m, 0.1, 16, 1.0, &g, z0, 0, end, &evals) == MFLOW_OK);
  CHECK(evals == 16);
  mflow::GuidanceConfig cg;
  cg.alpha = 0.6;
  cg.beta = 0.8;
  const mflow::SmoothedField field(gmm, 0.1);
  const auto rec = mflow::sample_mg(field, mflow::make_uniform_grid(16), Eigen::Map<const mflow::Vec>(z0, 2), 0, cg);
  CHECK(end[0] == rec.endpoint[0]);
  CHECK(end[1] == rec.endpoint[1]);

  g.cfg_omega = 2.0;
  REQUIRE(mflow_sample_trajectory(m, 0.0, 16, 1.0, &g, z0, 1, end, &evals) == MFLOW_OK);
  CHECK(evals == 32);
  CHECK(mflow_sample_trajectory(m, 0.0, 16, 1.0, &g, z0, -1, end, &evals) == MFLOW_ERR_INVALID_ARGUMENT);
  g.cfg_omega = 1.0;
  g.beta = 1.0;
  CHECK(mflow_sample_trajectory(m, 0.0, 16, 1.0, &g, z0, 0, end, &evals) == MFLOW_ERR_INVALID_ARGUMENT);
  mflow_mixture_free(m);
}

TEST_CASE("experiments, overrides and the check battery") {
  mflow_experiment* e = nullptr;
  REQUIRE(mflow_experiment_load((kSource + "/configs/default.json").c_str(), &e) == MFLOW_OK);
  CHECK(mflow_experiment_override(e, "alpha", 0.2) == MFLOW_OK);
  CHECK(mflow_experiment_override(e, "beta", 1.5) == MFLOW_ERR_CONFIG);
  CHECK(mflow_experiment_override(e, "steps", 2.5) == MFLOW_ERR_CONFIG);
  CHECK(mflow_experiment_override(e, "gamma", 1.0) == MFLOW_ERR_CONFIG);
  CHECK(mflow_experiment_override(e, "seed", 12.0) == MFLOW_OK);
  std::vector<std::string> lines;
  CHECK(mflow_run_check(e, collect, &lines) == MFLOW_OK);
  CHECK(lines.size() >= 10);
  for (const auto& l : lines) CHECK_MESSAGE(l.rfind("PASS ", 0) == 0, l);
  CHECK(mflow_run_toy(e, 99) == MFLOW_ERR_INVALID_ARGUMENT);
  mflow_experiment_free(e);

  CHECK(mflow_experiment_load("/nonexistent/config.json", &e) == MFLOW_ERR_CONFIG);
  CHECK(mflow_run_sample(nullptr) == MFLOW_ERR_INVALID_ARGUMENT);
}

}

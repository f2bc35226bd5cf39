#include "mflow/config.hpp"
#include "mflow/error.hpp"
#include "mflow/harness.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace mflow;
namespace fs = std::filesystem;

namespace {

const std::string kSource = MFLOW_SOURCE_DIR;
const std::string kFixture = kSource + "/data/tree_mixture.json";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mflow_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig small_config(const fs::path& out) {
  ExperimentConfig cfg;
  cfg.mixture = kFixture;
  cfg.field.kind = FieldKind::smoothed;
  cfg.field.epsilon = 0.1;
  cfg.grid.n_steps = 8;
  cfg.guidance.alpha = 0.6;
  cfg.guidance.beta = 0.8;
  cfg.n_trajectories = 256;
  cfg.record_trajectories = 2;
  cfg.metrics.n_real = 256;
  cfg.seed = 3;
  cfg.output_dir = out.string();
  cfg.sweep.promote_top = 0;
  return cfg;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("sample command is byte-reproducible") {
  const auto a = scratch("sample_a"), b = scratch("sample_b");
  auto cfg = small_config(a);
  sample_command(cfg);
  cfg.output_dir = b.string();
  sample_command(cfg);
  for (const char* f : {"samples.csv", "trajectory_0.csv", "trajectory_1.csv"}) {
    CHECK(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK_FALSE(fs::exists(a / "trajectory_2.csv"));
  const auto text = slurp(a / "samples.csv");
  CHECK(text.rfind("x_0,x_1,class\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 257);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("runs share initial noise across settings") {
  auto cfg = small_config(scratch("shared"));
  cfg.guidance.alpha = 0.0;
  const auto base = run_sample(cfg);
  cfg.guidance.alpha = 0.6;
  const auto mg = run_sample(cfg);
  CHECK(base.samples.labels == mg.samples.labels);
  for (std::size_t i = 0; i < base.trajectories.size(); ++i) {
    CHECK(base.trajectories[i].steps[0].z == mg.trajectories[i].steps[0].z);
    CHECK(base.trajectories[i].steps[1].z == mg.trajectories[i].steps[1].z);
  }
  CHECK(base.samples.points != mg.samples.points);
  CHECK(base.evaluations == base.expected_evaluations);
  CHECK(mg.evaluations == 256 * 8);
}

TEST_CASE("empty sample request") {
  auto cfg = small_config(scratch("empty"));
  cfg.n_trajectories = 0;
  try {
    run_sample(cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::empty_set);
  }
}

TEST_CASE("a one-cell sweep equals sample plus metrics") {
  auto cfg = small_config(scratch("sweep1"));
  cfg.sweep.alpha = {0.6};
  cfg.sweep.beta = {0.8};
  const auto sweep = run_sweep(cfg);
  REQUIRE(sweep.rows.size() == 1);
  const auto gmm = load_mixture(kFixture);
  const auto run = run_sample(cfg);
  const auto ref = reference_draw(gmm, cfg.seed, cfg.metrics.n_real);
  const auto direct = compute_metrics(ref, run.samples, cfg.metrics.k, cfg.metrics.mmd_bandwidth);
  CHECK(sweep.rows[0].report.frechet == direct.frechet);
  CHECK(sweep.rows[0].report.precision == direct.precision);
  CHECK(sweep.rows[0].report.recall == direct.recall);
  CHECK(sweep.rows[0].report.mmd2 == direct.mmd2);
  CHECK(sweep.rows[0].status == "ok");
}

TEST_CASE("sweep grid layout, alpha = 0 column and promotion") {
  const auto dir = scratch("sweep");
  auto cfg = small_config(dir);
  cfg.n_trajectories = 128;
  cfg.metrics.n_real = 128;
  cfg.sweep.alpha = {0.0, 0.5};
  cfg.sweep.beta = {0.0, 0.4, 0.8};
  cfg.sweep.promote_top = 2;
  const auto res = sweep_command(cfg);
  REQUIRE(res.rows.size() == 6);
  for (int j = 1; j < 3; ++j) CHECK(res.rows[j].report.frechet == res.rows[0].report.frechet);
  CHECK(res.rows[3].report.frechet != res.rows[4].report.frechet);
  REQUIRE(res.promoted.size() == 2);
  CHECK(res.promoted[0].report.n_fake == 512);
  CHECK(res.promoted[0].report.n_real == 512);
  const auto text = slurp(dir / "sweep.csv");
  CHECK(text.rfind("alpha,beta,cfg_omega,n_steps,frechet,precision,recall,mmd2,n_real,n_fake,k,evaluations,status\n", 0) == 0);
  CHECK(fs::exists(dir / "sweep_top.csv"));
  fs::remove_all(dir);
}

TEST_CASE("a failing cell is recorded, not fatal") {
  auto cfg = small_config(scratch("sweepbad"));
  cfg.n_trajectories = 2;
  cfg.metrics.n_real = 64;
  cfg.sweep.alpha = {0.0};
  const auto res = run_sweep(cfg);
  REQUIRE(res.rows.size() == 1);
  CHECK(res.rows[0].status != "ok");
}

TEST_CASE("toy panels") {
  const auto dir = scratch("toy");
  auto cfg = load_config(kSource + "/configs/toy.json");
  cfg.output_dir = dir.string();
  const auto res = emit_toy_panels(cfg, cfg.toy.step_index);
  CHECK(fs::exists(dir / "panel_baseline.svg"));
  CHECK(fs::exists(dir / "panel_mg.svg"));
  CHECK(fs::exists(dir / "panel_velocity.svg"));
  CHECK(fs::exists(dir / "panel_xhat_0.svg"));
  CHECK(fs::exists(dir / "panel_xhat_31.svg"));
  CHECK(fs::exists(dir / "toy_summary.csv"));
  CHECK(res.files.size() == 3 + 32 + 1);
  CHECK(res.probe_count >= 50);
  CHECK(res.outward_fraction > 0.5);
  CHECK(res.max_extrapolation_norm > 0.0);

  // alpha = 0 draws the same picture twice
  const auto d0 = scratch("toy0");
  cfg.output_dir = d0.string();
  cfg.guidance.alpha = 0.0;
  cfg.toy.n_trajectories = 16;
  emit_toy_panels(cfg, 3);
  const auto base = slurp(d0 / "panel_baseline.svg");
  auto mg = slurp(d0 / "panel_mg.svg");
  // titles differ; compare the drawing below the title line
  CHECK(base.substr(base.find("</text>")) == mg.substr(mg.find("</text>")));
  CHECK_THROWS_AS(emit_toy_panels(cfg, 32), Error);
  fs::remove_all(dir);
  fs::remove_all(d0);
}

TEST_CASE("toy needs two dimensions") {
  const auto dir = scratch("toy3d");
  std::ofstream(dir / "m.json") << R"({"dim": 3, "components": [{"weight": 1.0, "mean": [0, 0, 0],
      "cov": [[1, 0, 0], [0, 1, 0], [0, 0, 1]], "class": 0}]})";
  auto cfg = small_config(dir);
  cfg.mixture = (dir / "m.json").string();
  try {
    emit_toy_panels(cfg, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::unsupported_dimension);
  }
  fs::remove_all(dir);
}

TEST_CASE("check passes on the fixture and names a broken mixture") {
  auto cfg = small_config(scratch("check"));
  const auto good = run_check(cfg);
  for (const auto& e : good.entries) CHECK_MESSAGE(e.passed, (e.name + ": " + e.detail));
  CHECK(good.all_passed());
  CHECK(good.entries.size() >= 10);

  const auto dir = scratch("check_bad");
  auto text = slurp(kFixture);
  text.replace(text.find("0.0625"), 6, "0.0125");
  std::ofstream(dir / "bad.json") << text;
  cfg.mixture = (dir / "bad.json").string();
  const auto bad = run_check(cfg);
  CHECK_FALSE(bad.all_passed());
  REQUIRE(!bad.entries.empty());
  CHECK(bad.entries[0].name == "mixture_load");
  CHECK(bad.entries[0].detail.find("weights sum to") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("config parsing") {
  const auto cfg = load_config(kSource + "/configs/default.json");
  CHECK(cfg.mixture == (fs::path(kSource) / "data/tree_mixture.json").lexically_normal().string());
  CHECK(cfg.guidance.alpha == 0.6);
  CHECK(cfg.grid.n_steps == 16);

  const auto j = config_to_json(cfg);
  const auto back = parse_config(j.dump(), "/");
  CHECK(config_to_json(back) == j);

  auto expect_config_error = [](const std::string& text) {
    try {
      parse_config(text);
      FAIL("expected a config error for " << text);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::config);
    }
  };
  expect_config_error(R"({"mixture": "m.json", "bogus": 1})");
  expect_config_error(R"({"mixture": "m.json", "guidance": {"alpah": 0.5}})");
  expect_config_error(R"({"mixture": "m.json", "guidance": {"beta": 1.0}})");
  expect_config_error(R"({"mixture": "m.json", "rng": "mt19937"})");
  expect_config_error(R"({"mixture": "m.json", "grid": {"n_steps": 0}})");
  expect_config_error(R"({"mixture": "m.json", "sweep": {"alpha": [0.5, 0.2]}})");
  expect_config_error(R"({"grid": {"n_steps": 4}})");
  expect_config_error("{not json");
  expect_config_error(R"({"mixture": "m.json", "field": {"kind": "mlp"}})");
}

TEST_CASE("overrides collapse sweep ranges") {
  auto cfg = load_config(kSource + "/configs/sweep_smoothed.json");
  override_alpha(cfg, 0.3);
  CHECK(cfg.sweep.alpha == std::vector<double>{0.3});
  CHECK(cfg.guidance.alpha == 0.3);
  override_steps(cfg, 4);
  CHECK(cfg.sweep.n_steps == std::vector<long>{4});
  CHECK(cfg.sweep.beta.size() == 5);
}

TEST_CASE("oracle probes carry enough kernel mass") {
  const auto gmm = load_mixture(kFixture);
  const auto probes = draw_oracle_probes(gmm, 20, 10, 0.1, 0.5, 200000, 0.05);
  REQUIRE(probes.size() == 20);
  for (const auto& p : probes) {
    CHECK(p.t >= 0.1);
    CHECK(p.t <= 0.5);
    const double dens = std::exp(log_density_and_score(marginal_at(gmm, p.t), p.x).log_density);
    CHECK(200000.0 * dens * 2.0 * M_PI * 0.0025 >= 200.0 * (1.0 - 1e-12));
  }
  CHECK_THROWS_AS(draw_oracle_probes(gmm, 5, 10, 0.1, 0.5, 10, 0.05), Error);
}

}

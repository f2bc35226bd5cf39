#include "mflow/harness.hpp"

#include "mflow/error.hpp"
#include "mflow/guidance.hpp"
#include "mflow/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace mflow {

namespace {

std::string fmt_double(double x, const char* spec = "%.17g") {
  char buf[48];
  std::snprintf(buf, sizeof buf, spec, x);
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create output directory " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

TimeGrid grid_for(const ExperimentConfig& cfg) { return make_shifted_grid(cfg.grid.n_steps, cfg.grid.shift); }

std::vector<double> or_default(const std::vector<double>& range, double fallback) {
  return range.empty() ? std::vector<double>{fallback} : range;
}

class ConstantField final : public VelocityField {
 public:
  explicit ConstantField(Vec c) : c_(std::move(c)) {}
  int dim() const override { return static_cast<int>(c_.size()); }
  Vec evaluate(const Vec&, double, Condition) const override { return c_; }

 private:
  Vec c_;
};

bool bit_equal(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

FieldBundle build_fields(const ExperimentConfig& cfg, const GaussianMixture& gmm) {
  FieldBundle fb;
  switch (cfg.field.kind) {
    case FieldKind::analytic:
      fb.main = std::make_unique<AnalyticField>(gmm);
      break;
    case FieldKind::smoothed:
      fb.main = std::make_unique<SmoothedField>(gmm, cfg.field.epsilon);
      break;
    case FieldKind::mlp: {
      auto ck = load_checkpoint(cfg.field.checkpoint);
      if (ck.params.dim != gmm.dim()) fail(ErrorCode::config, "checkpoint dimension does not match mixture");
      fb.main = std::make_unique<MlpField>(cfg.field.use_ema ? ck.ema_params : ck.params);
      break;
    }
  }
  if (cfg.guidance.auto_weight) fb.weak = std::make_unique<SmoothedField>(gmm, cfg.field.weak_epsilon);
  return fb;
}

Vec initial_noise(std::uint64_t seed, long index, int dim) {
  RandomStream rng(seed, StreamDomain::noise, static_cast<std::uint64_t>(index));
  Vec z(dim);
  for (int j = 0; j < dim; ++j) z[j] = rng.normal();
  return z;
}

int draw_class(std::uint64_t seed, long index, const GaussianMixture& gmm) {
  RandomStream rng(seed, StreamDomain::class_label, static_cast<std::uint64_t>(index));
  double u = rng.uniform();
  for (int label : gmm.labels()) {
    u -= gmm.class_prior(label);
    if (u < 0.0) return label;
  }
  return gmm.labels().back();
}

SampleSet reference_draw(const GaussianMixture& gmm, std::uint64_t seed, long n, std::uint64_t sub) {
  SampleSet s;
  s.points.resize(gmm.dim(), n);
  s.labels.resize(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    RandomStream rng(seed, StreamDomain::reference, static_cast<std::uint64_t>(i), sub);
    int label = 0;
    s.points.col(i) = gmm.sample(rng, std::nullopt, &label);
    s.labels[static_cast<std::size_t>(i)] = label;
  }
  s.provenance = "reference seed=" + std::to_string(seed) + " sub=" + std::to_string(sub);
  return s;
}

std::vector<Probe> draw_probes(const GaussianMixture& gmm, long n, std::uint64_t seed, double t_lo, double t_hi) {
  std::vector<Probe> out;
  out.reserve(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    RandomStream rng(seed, StreamDomain::probe, static_cast<std::uint64_t>(i));
    const double t = t_lo + (t_hi - t_lo) * rng.uniform();
    Vec x0(gmm.dim());
    for (int j = 0; j < gmm.dim(); ++j) x0[j] = rng.normal();
    const Vec x1 = gmm.sample(rng);
    out.push_back({t * x1 + (1.0 - t) * x0, t});
  }
  return out;
}

std::vector<Probe> draw_oracle_probes(const GaussianMixture& gmm, long n, std::uint64_t seed, double t_lo,
                                      double t_hi, long n_pairs, double bandwidth, double min_mass) {
  const double log_vol = 0.5 * gmm.dim() * std::log(2.0 * std::numbers::pi * bandwidth * bandwidth);
  const double log_floor = std::log(min_mass) - std::log(static_cast<double>(n_pairs)) - log_vol;
  std::vector<Probe> out;
  const long budget = 100 * n;
  for (const auto& p : draw_probes(gmm, budget, seed, t_lo, t_hi)) {
    if (log_density_and_score(marginal_at(gmm, p.t), p.x).log_density >= log_floor) out.push_back(p);
    if (static_cast<long>(out.size()) == n) return out;
  }
  fail(ErrorCode::insufficient_overlap, "could not place " + std::to_string(n) + " oracle probes in " +
                                            std::to_string(budget) + " candidates");
}

SampleRun run_sample(const ExperimentConfig& cfg, const GaussianMixture& gmm, const VelocityField& field,
                     const VelocityField* weak) {
  if (cfg.n_trajectories <= 0) fail(ErrorCode::empty_set, "n_trajectories must be positive to draw samples");
  const TimeGrid grid = grid_for(cfg);
  CountingField counted(field);
  std::unique_ptr<CountingField> counted_weak;
  if (weak) counted_weak = std::make_unique<CountingField>(*weak);
  SampleRun run;
  run.samples.points.resize(gmm.dim(), cfg.n_trajectories);
  run.samples.labels.resize(static_cast<std::size_t>(cfg.n_trajectories));
  std::ostringstream prov;
  prov << "alpha=" << cfg.guidance.alpha << " beta=" << cfg.guidance.beta << " omega=" << cfg.guidance.cfg_omega
       << " steps=" << cfg.grid.n_steps << " seed=" << cfg.seed;
  run.samples.provenance = prov.str();
  for (long i = 0; i < cfg.n_trajectories; ++i) {
    const Vec z0 = initial_noise(cfg.seed, i, gmm.dim());
    const int label = draw_class(cfg.seed, i, gmm);
    auto rec = sample_mg(counted, grid, z0, label, cfg.guidance, counted_weak.get());
    run.samples.points.col(i) = rec.endpoint;
    run.samples.labels[static_cast<std::size_t>(i)] = label;
    if (i < cfg.record_trajectories) run.trajectories.push_back(std::move(rec));
  }
  run.evaluations = counted.calls() + (counted_weak ? counted_weak->calls() : 0);
  run.expected_evaluations = expected_evaluations(grid, cfg.guidance) * cfg.n_trajectories;
  return run;
}

SampleRun run_sample(const ExperimentConfig& cfg) {
  const auto gmm = load_mixture(cfg.mixture);
  const auto fields = build_fields(cfg, gmm);
  return run_sample(cfg, gmm, *fields.main, fields.weak.get());
}

SweepResult run_sweep(const ExperimentConfig& cfg) {
  const auto gmm = load_mixture(cfg.mixture);
  const auto fields = build_fields(cfg, gmm);
  const SampleSet reference = reference_draw(gmm, cfg.seed, cfg.metrics.n_real, 0);
  const auto alphas = or_default(cfg.sweep.alpha, cfg.guidance.alpha);
  const auto betas = or_default(cfg.sweep.beta, cfg.guidance.beta);
  const auto omegas = or_default(cfg.sweep.cfg_omega, cfg.guidance.cfg_omega);
  const std::vector<long> steps = cfg.sweep.n_steps.empty() ? std::vector<long>{cfg.grid.n_steps} : cfg.sweep.n_steps;

  auto run_cell = [&](SweepRow& row, const SampleSet& ref, long n_traj) {
    ExperimentConfig cell = cfg;
    cell.guidance.alpha = row.alpha;
    cell.guidance.beta = row.beta;
    cell.guidance.cfg_omega = row.cfg_omega;
    cell.grid.n_steps = row.n_steps;
    cell.n_trajectories = n_traj;
    cell.record_trajectories = 0;
    try {
      cell.guidance.validate();
      const auto run = run_sample(cell, gmm, *fields.main, fields.weak.get());
      row.evaluations = run.evaluations;
      row.report = compute_metrics(ref, run.samples, cfg.metrics.k, cfg.metrics.mmd_bandwidth);
      if (run.evaluations != run.expected_evaluations) row.status = "evaluation-count-mismatch";
    } catch (const Error& e) {
      row.status = std::string(to_string(e.code())) + ": " + e.what();
    }
  };

  SweepResult result;
  for (double omega : omegas)
    for (long n : steps)
      for (double alpha : alphas)
        for (double beta : betas) {
          SweepRow row{alpha, beta, omega, n, {}, 0, "ok"};
          run_cell(row, reference, cfg.n_trajectories);
          result.rows.push_back(std::move(row));
        }

  if (cfg.sweep.promote_top > 0) {
    std::vector<const SweepRow*> ok;
    for (const auto& r : result.rows)
      if (r.status == "ok") ok.push_back(&r);
    std::stable_sort(ok.begin(), ok.end(),
                     [](const SweepRow* a, const SweepRow* b) { return a->report.frechet < b->report.frechet; });
    ok.resize(std::min<std::size_t>(ok.size(), static_cast<std::size_t>(cfg.sweep.promote_top)));
    if (!ok.empty()) {
      const SampleSet big_ref = reference_draw(gmm, cfg.seed, 4 * cfg.metrics.n_real, 1);
      for (const auto* r : ok) {
        SweepRow row{r->alpha, r->beta, r->cfg_omega, r->n_steps, {}, 0, "ok"};
        run_cell(row, big_ref, 4 * cfg.n_trajectories);
        result.promoted.push_back(std::move(row));
      }
    }
  }
  return result;
}

void write_samples_csv(const std::string& path, const SampleSet& s) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io, "cannot write " + path);
  for (int j = 0; j < s.dim(); ++j) out << "x_" << j << ',';
  out << "class\n";
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    for (int j = 0; j < s.dim(); ++j) out << fmt_double(s.points(j, i)) << ',';
    out << (s.labels.empty() ? -1 : s.labels[static_cast<std::size_t>(i)]) << '\n';
  }
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io, "cannot write " + path);
  out << "alpha,beta,cfg_omega,n_steps,";
  write_metric_header(out);
  out << ",evaluations,status\n";
  for (const auto& r : rows) {
    out << fmt_double(r.alpha) << ',' << fmt_double(r.beta) << ',' << fmt_double(r.cfg_omega) << ',' << r.n_steps
        << ',';
    write_metric_row(out, r.report);
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    out << ',' << r.evaluations << ',' << status << '\n';
  }
}

SampleRun sample_command(const ExperimentConfig& cfg) {
  auto run = run_sample(cfg);
  ensure_dir(cfg.output_dir);
  write_samples_csv(join(cfg.output_dir, "samples.csv"), run.samples);
  for (std::size_t i = 0; i < run.trajectories.size(); ++i) {
    std::ofstream out(join(cfg.output_dir, "trajectory_" + std::to_string(i) + ".csv"));
    if (!out) fail(ErrorCode::io, "cannot write trajectory file");
    write_trajectory_csv(out, run.trajectories[i]);
  }
  return run;
}

SweepResult sweep_command(const ExperimentConfig& cfg) {
  auto result = run_sweep(cfg);
  ensure_dir(cfg.output_dir);
  write_sweep_csv(join(cfg.output_dir, "sweep.csv"), result.rows);
  if (!result.promoted.empty()) write_sweep_csv(join(cfg.output_dir, "sweep_top.csv"), result.promoted);
  return result;
}

TrainResult train_command(const ExperimentConfig& cfg) {
  const auto gmm = load_mixture(cfg.mixture);
  auto result = train(gmm, cfg.train);
  ensure_dir(cfg.output_dir);
  save_checkpoint(join(cfg.output_dir, "checkpoint.json"), result, cfg.train);
  std::ofstream out(join(cfg.output_dir, "loss_curve.csv"));
  if (!out) fail(ErrorCode::io, "cannot write loss curve");
  out << "step,loss\n";
  for (std::size_t i = 0; i < result.loss_curve.size(); ++i) out << i << ',' << fmt_double(result.loss_curve[i]) << '\n';
  return result;
}

OutwardStat outward_statistic(const GaussianMixture& gmm, const std::vector<TrajectoryRecord>& trajs,
                              const std::vector<int>& classes, std::size_t step) {
  long hits = 0, count = 0;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    if (step >= trajs[i].steps.size()) fail(ErrorCode::invalid_argument, "step index beyond trajectory length");
    const auto& s = trajs[i].steps[step];
    const int c = classes[i];
    const double t = s.t;
    // the class-conditional marginal at t: mean t*mu_c, covariance t^2 Sigma_c + (1-t)^2 I
    const Vec centre = t * gmm.mean(c);
    const Mat cov = (t * t) * gmm.covariance(c) + (1.0 - t) * (1.0 - t) * Mat::Identity(gmm.dim(), gmm.dim());
    const double spread = std::sqrt(cov.trace() / gmm.dim());
    const Vec radial = s.z - centre;
    if (radial.norm() > 2.0 * spread || s.g.norm() == 0.0) continue;
    ++count;
    if (s.g.dot(radial) > 0.0) ++hits;
  }
  return {count ? static_cast<double>(hits) / static_cast<double>(count) : 0.0, count};
}

ToyResult emit_toy_panels(const ExperimentConfig& cfg, const GaussianMixture& gmm, const VelocityField& field,
                          long step_index) {
  if (gmm.dim() != 2) fail(ErrorCode::unsupported_dimension, "toy panels need a 2-D mixture");
  const TimeGrid grid = grid_for(cfg);
  if (step_index < 0 || step_index >= static_cast<long>(grid.steps()))
    fail(ErrorCode::invalid_argument, "toy step index outside the time grid");
  GuidanceConfig base_g = cfg.guidance;
  base_g.alpha = 0.0;
  std::vector<TrajectoryRecord> base, mg;
  std::vector<int> classes;
  const long n = cfg.toy.n_trajectories;
  std::unique_ptr<VelocityField> weak;
  if (cfg.guidance.auto_weight) weak = std::make_unique<SmoothedField>(gmm, cfg.field.weak_epsilon);
  for (long i = 0; i < n; ++i) {
    const Vec z0 = initial_noise(cfg.seed, i, 2);
    const int c = draw_class(cfg.seed, i, gmm);
    classes.push_back(c);
    base.push_back(sample_mg(field, grid, z0, c, base_g, weak.get()));
    mg.push_back(sample_mg(field, grid, z0, c, cfg.guidance, weak.get()));
  }

  std::vector<svg::Point> all;
  for (const auto* set : {&base, &mg})
    for (const auto& tr : *set) {
      for (const auto& s : tr.steps) all.push_back({s.z[0], s.z[1]});
      all.push_back({tr.endpoint[0], tr.endpoint[1]});
    }

  ensure_dir(cfg.output_dir);
  ToyResult result;
  auto trajectory_panel = [&](const std::vector<TrajectoryRecord>& set, const std::string& name,
                              const std::string& title) {
    svg::Canvas canvas;
    canvas.fit(all);
    canvas.title(title);
    for (std::size_t k = 0; k < gmm.size(); ++k)
      canvas.circle({gmm.component(k).mean[0], gmm.component(k).mean[1]}, 5.0,
                    svg::class_color(gmm.component(k).label), 0.5, true);
    for (std::size_t i = 0; i < set.size(); ++i) {
      std::vector<svg::Point> line;
      for (const auto& s : set[i].steps) line.push_back({s.z[0], s.z[1]});
      line.push_back({set[i].endpoint[0], set[i].endpoint[1]});
      canvas.polyline(line, svg::class_color(classes[i]), 0.8, 0.5);
      canvas.circle(line.back(), 2.0, svg::class_color(classes[i]));
    }
    const auto path = join(cfg.output_dir, name);
    canvas.write(path);
    result.files.push_back(path);
  };
  trajectory_panel(base, "panel_baseline.svg", "baseline (alpha = 0)");
  trajectory_panel(mg, "panel_mg.svg",
                   "momentum guidance (alpha = " + fmt_double(cfg.guidance.alpha, "%.3g") +
                       ", beta = " + fmt_double(cfg.guidance.beta, "%.3g") + ")");

  // Velocity view at the chosen step: v on a regular grid, then v (blue) and
  // v - m (red) at the MG particles.
  const auto k = static_cast<std::size_t>(step_index);
  const double t = grid[k];
  std::vector<svg::Point> here;
  for (const auto& tr : mg) here.push_back({tr.steps[k].z[0], tr.steps[k].z[1]});
  svg::Canvas quiver;
  quiver.fit(here);
  quiver.title("step " + std::to_string(step_index) + ", t = " + fmt_double(t, "%.4f") +
               ": v (blue), v - m (red), field v on grid (gray)");
  double lo_x = INFINITY, hi_x = -INFINITY, lo_y = INFINITY, hi_y = -INFINITY;
  for (const auto& p : here) {
    lo_x = std::min(lo_x, p.x);
    hi_x = std::max(hi_x, p.x);
    lo_y = std::min(lo_y, p.y);
    hi_y = std::max(hi_y, p.y);
  }
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-6});
  double v_max = 1e-12, g_max = 1e-12;
  for (const auto& tr : mg) {
    v_max = std::max(v_max, tr.steps[k].v.norm());
    g_max = std::max(g_max, tr.steps[k].g.norm());
  }
  const int gp = cfg.toy.grid_points;
  const int grid_class = gmm.labels().front();
  for (int a = 0; a < gp; ++a)
    for (int b = 0; b < gp; ++b) {
      Vec x(2);
      x << lo_x + (hi_x - lo_x) * a / (gp - 1), lo_y + (hi_y - lo_y) * b / (gp - 1);
      const Vec v = field.evaluate(x, t, grid_class);
      const Vec tip = x + (0.06 * span / v_max) * v;
      quiver.arrow({x[0], x[1]}, {tip[0], tip[1]}, "#c8c8c8", 0.8);
    }
  for (std::size_t i = 0; i < mg.size(); ++i) {
    const auto& s = mg[i].steps[k];
    const Vec tv = s.z + (0.06 * span / v_max) * s.v;
    const Vec tg = s.z + (0.06 * span / g_max) * s.g;
    quiver.arrow({s.z[0], s.z[1]}, {tv[0], tv[1]}, "#1f77b4");
    quiver.arrow({s.z[0], s.z[1]}, {tg[0], tg[1]}, "#d62728");
    quiver.circle({s.z[0], s.z[1]}, 2.0, svg::class_color(classes[i]));
  }
  const auto qpath = join(cfg.output_dir, "panel_velocity.svg");
  quiver.write(qpath);
  result.files.push_back(qpath);

  // Data-estimate sequence: baseline hollow, MG filled.
  for (std::size_t step = 0; step < grid.steps(); ++step) {
    std::vector<svg::Point> pts;
    for (const auto* set : {&base, &mg})
      for (const auto& tr : *set) pts.push_back({tr.steps[step].x_hat[0], tr.steps[step].x_hat[1]});
    svg::Canvas canvas;
    canvas.fit(pts);
    canvas.title("data estimate at t = " + fmt_double(grid[step], "%.4f") + " (hollow: baseline, filled: MG)");
    for (std::size_t i = 0; i < mg.size(); ++i) {
      const auto& xb = base[i].steps[step].x_hat;
      const auto& xm = mg[i].steps[step].x_hat;
      canvas.circle({xb[0], xb[1]}, 3.0, svg::class_color(classes[i]), 0.8, true);
      canvas.circle({xm[0], xm[1]}, 2.5, svg::class_color(classes[i]), 0.9, false);
    }
    const auto path = join(cfg.output_dir, "panel_xhat_" + std::to_string(step) + ".svg");
    canvas.write(path);
    result.files.push_back(path);
  }

  const auto stat = outward_statistic(gmm, mg, classes, k);
  result.outward_fraction = stat.fraction;
  result.probe_count = stat.count;
  for (const auto& tr : mg) result.max_extrapolation_norm = std::max(result.max_extrapolation_norm, tr.steps[k].g.norm());

  const auto spath = join(cfg.output_dir, "toy_summary.csv");
  std::ofstream summary(spath);
  if (!summary) fail(ErrorCode::io, "cannot write " + spath);
  summary << "step,t,outward_fraction,probe_count,max_extrapolation_norm\n"
          << step_index << ',' << fmt_double(t) << ',' << fmt_double(result.outward_fraction) << ','
          << result.probe_count << ',' << fmt_double(result.max_extrapolation_norm) << '\n';
  result.files.push_back(spath);
  return result;
}

ToyResult emit_toy_panels(const ExperimentConfig& cfg, long step_index) {
  const auto gmm = load_mixture(cfg.mixture);
  const auto fields = build_fields(cfg, gmm);
  return emit_toy_panels(cfg, gmm, *fields.main, step_index);
}

bool CheckReport::all_passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const CheckEntry& e) { return e.passed; });
}

CheckReport run_check(const ExperimentConfig& cfg) {
  CheckReport report;
  auto add = [&](std::string name, bool ok, std::string detail) {
    report.entries.push_back({std::move(name), ok, std::move(detail)});
  };
  auto guarded = [&](const std::string& name, auto&& body) {
    try {
      body();
    } catch (const std::exception& e) {
      add(name, false, std::string("threw: ") + e.what());
    }
  };

  std::optional<GaussianMixture> loaded;
  try {
    loaded.emplace(load_mixture(cfg.mixture));
    add("mixture_load", true, cfg.mixture + ": " + std::to_string(loaded->size()) + " components");
  } catch (const std::exception& e) {
    add("mixture_load", false, e.what());
    return report;
  }
  const GaussianMixture& gmm = *loaded;
  const int d = gmm.dim();

  guarded("marginal_t0_moments", [&] {
    const auto m0 = marginal_at(gmm, 0.0);
    const GaussianMixture as_mix(m0.components);
    const double mean_err = as_mix.mean().norm();
    const double cov_err = (as_mix.covariance() - Mat::Identity(d, d)).cwiseAbs().maxCoeff();
    add("marginal_t0_moments", mean_err < 1e-12 && cov_err < 1e-12,
        "|mean|=" + fmt_double(mean_err, "%.3g") + " max|cov-I|=" + fmt_double(cov_err, "%.3g"));
  });

  guarded("score_velocity_identity", [&] {
    double worst = 0.0;
    for (const auto& p : draw_probes(gmm, 1000, cfg.seed, 0.0, 0.99)) {
      const Vec v = optimal_velocity(gmm, p.x, p.t);
      const Vec score = log_density_and_score(marginal_at(gmm, p.t), p.x).score;
      const double rel = ((p.t * v - p.x) / (1.0 - p.t) - score).norm() / (1.0 + score.norm());
      worst = std::max(worst, rel);
    }
    add("score_velocity_identity", worst < 1e-8, "max relative residual " + fmt_double(worst, "%.3g"));
  });

  guarded("responsibilities", [&] {
    double worst = 0.0;
    bool nonneg = true;
    for (const auto& p : draw_probes(gmm, 200, cfg.seed + 1, 0.0, 1.0)) {
      const auto r = responsibilities(gmm, p.x, p.t);
      double s = 0.0;
      for (double x : r) {
        s += x;
        nonneg = nonneg && x >= 0.0;
      }
      worst = std::max(worst, std::abs(s - 1.0));
    }
    add("responsibilities", nonneg && worst < 1e-12, "max |sum-1| " + fmt_double(worst, "%.3g"));
  });

  guarded("unconditional_blend", [&] {
    double worst = 0.0;
    for (const auto& p : draw_probes(gmm, 200, cfg.seed + 2, 0.0, 0.99)) {
      const auto r = responsibilities(gmm, p.x, p.t);
      Vec blend = Vec::Zero(d);
      for (int label : gmm.labels()) {
        double post = 0.0;
        for (std::size_t k = 0; k < gmm.size(); ++k)
          if (gmm.component(k).label == label) post += r[k];
        blend += post * optimal_velocity(gmm, p.x, p.t, label);
      }
      worst = std::max(worst, (blend - unconditional_velocity(gmm, p.x, p.t)).norm());
    }
    add("unconditional_blend", worst < 1e-10, "max deviation " + fmt_double(worst, "%.3g"));
  });

  guarded("oracle_agreement", [&] {
    const long n_pairs = 200000;
    const double h = 0.05;
    const auto probes = draw_oracle_probes(gmm, 20, cfg.seed + 3, 0.1, 0.5, n_pairs, h);
    long agree = 0;
    for (std::size_t i = 0; i < probes.size(); ++i) {
      RandomStream rng(cfg.seed, StreamDomain::oracle, i);
      try {
        const auto est = mc_velocity(gmm, probes[i].x, probes[i].t, std::nullopt, n_pairs, h, rng);
        const Vec exact = optimal_velocity(gmm, probes[i].x, probes[i].t);
        bool ok = true;
        for (int j = 0; j < d; ++j) ok = ok && std::abs(est.velocity[j] - exact[j]) <= 3.0 * est.stderr_[j];
        agree += ok;
      } catch (const Error&) {
        // an oracle that cannot resolve the probe counts as a miss
      }
    }
    const double frac = static_cast<double>(agree) / static_cast<double>(probes.size());
    add("oracle_agreement", frac >= 0.95, std::to_string(agree) + "/" + std::to_string(probes.size()) + " within 3 sigma");
  });

  AnalyticField analytic(gmm);
  const TimeGrid grid32 = make_uniform_grid(32);

  guarded("reduction_alpha0", [&] {
    GuidanceConfig g = cfg.guidance;
    g.alpha = 0.0;
    g.cfg_omega = 1.0;
    g.auto_weight.reset();
    long mismatches = 0;
    const long n = 256;
    for (long i = 0; i < n; ++i) {
      const Vec z0 = initial_noise(cfg.seed, i, d);
      const int c = draw_class(cfg.seed, i, gmm);
      const auto a = sample_mg(analytic, grid32, z0, c, g);
      const auto b = integrate(analytic, grid32, z0, c);
      if (!bit_equal(a.endpoint, b.endpoint)) ++mismatches;
    }
    add("reduction_alpha0", mismatches == 0, std::to_string(mismatches) + " of " + std::to_string(n) + " endpoints differ");
  });

  guarded("step0_inertness", [&] {
    GuidanceConfig g;
    g.alpha = 0.6;
    g.beta = 0.8;
    const TimeGrid one = make_uniform_grid(32);
    long bad = 0;
    for (long i = 0; i < 64; ++i) {
      const Vec z0 = initial_noise(cfg.seed, i, d);
      const int c = draw_class(cfg.seed, i, gmm);
      const Vec v = analytic.evaluate(z0, 0.0, c);
      const auto mg = mg_step(z0, v, initial_momentum(v, g), one.dt(0), g, 0.0);
      if (!bit_equal(mg.z_next, euler_step(z0, v, one.dt(0)))) ++bad;
    }
    add("step0_inertness", bad == 0, std::to_string(bad) + " first steps differ from Euler");
  });

  guarded("constant_field_inertness", [&] {
    Vec c(d);
    for (int j = 0; j < d; ++j) c[j] = 0.3 * (j + 1) - 0.7;
    ConstantField field(c);
    GuidanceConfig g;
    g.alpha = 1.0;
    g.beta = 0.6;
    const auto mg = sample_mg(field, grid32, initial_noise(cfg.seed, 0, d), std::nullopt, g);
    const auto eu = integrate(field, grid32, initial_noise(cfg.seed, 0, d));
    bool same = bit_equal(mg.endpoint, eu.endpoint);
    for (std::size_t i = 0; i < mg.steps.size(); ++i) same = same && bit_equal(mg.steps[i].z, eu.steps[i].z);
    add("constant_field_inertness", same, same ? "MG trajectory equals Euler" : "trajectories differ");
  });

  guarded("evaluation_audit", [&] {
    CountingField counted(analytic);
    GuidanceConfig g;
    g.alpha = 0.8;
    g.beta = 0.4;
    sample_mg(counted, grid32, initial_noise(cfg.seed, 0, d), gmm.labels().front(), g);
    const long plain = counted.calls();
    counted.reset();
    g.cfg_omega = 2.0;
    g.cfg_interval = {0.125, 1.0};
    sample_mg(counted, grid32, initial_noise(cfg.seed, 0, d), gmm.labels().front(), g);
    long active = 0;
    for (std::size_t i = 0; i < grid32.steps(); ++i) active += grid32[i] >= 0.125;
    const long with_cfg = counted.calls();
    add("evaluation_audit", plain == 32 && with_cfg == 32 + active,
        "omega=1: " + std::to_string(plain) + " evaluations; omega=2: " + std::to_string(with_cfg) +
            " (expected " + std::to_string(32 + active) + ")");
  });

  guarded("unbiased_ema", [&] {
    MomentumState s{Vec::Zero(1), 0, MomentumInit::zero};
    Vec one(1), zero(1), ref(1);
    one << 1.0;
    zero << 0.0;
    ref << 1.0;
    momentum_update(s, one, 0.5);
    const double first = momentum_read(s, 0.5, true, false, ref)[0];
    momentum_update(s, zero, 0.5);
    const double second = momentum_read(s, 0.5, true, false, ref)[0];
    add("unbiased_ema", first == 1.0 && second == 1.0 / 3.0,
        "m_hat = " + fmt_double(first, "%.17g") + ", " + fmt_double(second, "%.17g"));
  });

  return report;
}

}  // namespace mflow

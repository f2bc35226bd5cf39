#pragma once

#include "mflow/config.hpp"
#include "mflow/gmm.hpp"
#include "mflow/metrics.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mflow {

// Fields built from an ExperimentConfig; weak is set when autoguidance is on.
struct FieldBundle {
  std::unique_ptr<VelocityField> main;
  std::unique_ptr<VelocityField> weak;
};

FieldBundle build_fields(const ExperimentConfig& cfg, const GaussianMixture& gmm);

// Initial noise and class for trajectory i; both depend only on (seed, i).
Vec initial_noise(std::uint64_t seed, long index, int dim);
int draw_class(std::uint64_t seed, long index, const GaussianMixture& gmm);

// n i.i.d. points from the target mixture on the reference stream `sub`.
SampleSet reference_draw(const GaussianMixture& gmm, std::uint64_t seed, long n, std::uint64_t sub = 0);

struct Probe {
  Vec x;
  double t;
};

// Probe points x = t x1 + (1-t) x0 with t uniform on [t_lo, t_hi]; x therefore
// lies where pi_t has mass.
std::vector<Probe> draw_probes(const GaussianMixture& gmm, long n, std::uint64_t seed, double t_lo, double t_hi);

// Probes for the kernel oracle. Candidates from draw_probes are kept only when the
// expected number of pairs under the kernel, n_pairs * pi_t(x) * (2 pi h^2)^(d/2),
// reaches min_mass. Decided from the density alone, before any estimate is made.
std::vector<Probe> draw_oracle_probes(const GaussianMixture& gmm, long n, std::uint64_t seed, double t_lo,
                                      double t_hi, long n_pairs, double bandwidth, double min_mass = 200.0);

struct SampleRun {
  SampleSet samples;
  std::vector<TrajectoryRecord> trajectories;  // the first record_trajectories
  long evaluations = 0;
  long expected_evaluations = 0;
};

SampleRun run_sample(const ExperimentConfig& cfg, const GaussianMixture& gmm, const VelocityField& field,
                     const VelocityField* weak = nullptr);
SampleRun run_sample(const ExperimentConfig& cfg);

struct SweepRow {
  double alpha, beta, cfg_omega;
  long n_steps;
  MetricReport report;
  long evaluations = 0;
  std::string status = "ok";
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<SweepRow> promoted;  // best cells re-evaluated at 4x sample size
};

SweepResult run_sweep(const ExperimentConfig& cfg);

void write_samples_csv(const std::string& path, const SampleSet& s);
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

// Writes samples.csv and trajectory_<i>.csv under cfg.output_dir.
SampleRun sample_command(const ExperimentConfig& cfg);
SweepResult sweep_command(const ExperimentConfig& cfg);
TrainResult train_command(const ExperimentConfig& cfg);

struct ToyResult {
  std::vector<std::string> files;
  // Share of particles within 2 sigma of their class mode whose (v - m) points
  // away from the class mean at the chosen step.
  double outward_fraction = 0.0;
  long probe_count = 0;
  // max |v - m| over particles at the chosen step.
  double max_extrapolation_norm = 0.0;
};

// Outward sign statistic on a set of MG trajectories at one step.
struct OutwardStat {
  double fraction;
  long count;
};
OutwardStat outward_statistic(const GaussianMixture& gmm, const std::vector<TrajectoryRecord>& trajs,
                              const std::vector<int>& classes, std::size_t step);

ToyResult emit_toy_panels(const ExperimentConfig& cfg, long step_index);
ToyResult emit_toy_panels(const ExperimentConfig& cfg, const GaussianMixture& gmm, const VelocityField& field,
                          long step_index);

struct CheckEntry {
  std::string name;
  bool passed;
  std::string detail;
};

struct CheckReport {
  std::vector<CheckEntry> entries;
  bool all_passed() const;
};

// Invariant battery. Never throws: failures, including load failures, are entries.
CheckReport run_check(const ExperimentConfig& cfg);

}  // namespace mflow

#pragma once

#include "mflow/guidance.hpp"
#include "mflow/mlp.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mflow {

enum class FieldKind { analytic, smoothed, mlp };

struct FieldSpec {
  FieldKind kind = FieldKind::analytic;
  double epsilon = 0.1;       // smoothed only
  std::string checkpoint;     // mlp only, resolved against the config directory
  bool use_ema = true;        // mlp only
  double weak_epsilon = 0.1;  // weak field for autoguidance
};

struct GridSpec {
  long n_steps = 32;
  double shift = 1.0;
};

struct SweepSpec {
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<double> cfg_omega;
  std::vector<long> n_steps;
  int promote_top = 3;
};

struct MetricSpec {
  long n_real = 8192;
  int k = 3;
  double mmd_bandwidth = 0.1;
};

struct ToySpec {
  long n_trajectories = 64;
  long step_index = 17;
  int grid_points = 15;
};

struct ExperimentConfig {
  std::string mixture;
  FieldSpec field;
  GridSpec grid;
  GuidanceConfig guidance;
  SweepSpec sweep;
  long n_trajectories = 8192;
  long record_trajectories = 0;
  MetricSpec metrics;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  TrainConfig train;
  ToySpec toy;

  void validate() const;
};

inline constexpr const char* kRngName = "philox4x64-10";

nlohmann::json guidance_to_json(const GuidanceConfig& g);
GuidanceConfig guidance_from_json(const nlohmann::json& j);

// Relative paths in the document are resolved against base_dir.
ExperimentConfig parse_config(const std::string& text, const std::string& base_dir = ".");
ExperimentConfig load_config(const std::string& path);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

// CLI overrides; a sweep range over the same key collapses to the value.
void override_alpha(ExperimentConfig& cfg, double v);
void override_beta(ExperimentConfig& cfg, double v);
void override_omega(ExperimentConfig& cfg, double v);
void override_steps(ExperimentConfig& cfg, long v);

}  // namespace mflow

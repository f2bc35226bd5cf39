#include "mflow/mflow.h"

#include "mflow/config.hpp"
#include "mflow/error.hpp"
#include "mflow/gmm.hpp"
#include "mflow/guidance.hpp"
#include "mflow/harness.hpp"

#include <cstring>
#include <memory>
#include <new>
#include <string>

struct mflow_mixture {
  mflow::GaussianMixture gmm;
};

struct mflow_experiment {
  mflow::ExperimentConfig cfg;
};

namespace {

thread_local std::string g_last_error;

mflow_status status_of(mflow::ErrorCode code) {
  using mflow::ErrorCode;
  switch (code) {
    case ErrorCode::invalid_argument: return MFLOW_ERR_INVALID_ARGUMENT;
    case ErrorCode::numeric: return MFLOW_ERR_NUMERIC;
    case ErrorCode::pole_at_data: return MFLOW_ERR_POLE_AT_DATA;
    case ErrorCode::insufficient_overlap: return MFLOW_ERR_INSUFFICIENT_OVERLAP;
    case ErrorCode::invalid_state: return MFLOW_ERR_INVALID_STATE;
    case ErrorCode::training_diverged: return MFLOW_ERR_TRAINING_DIVERGED;
    case ErrorCode::unsupported_dimension: return MFLOW_ERR_UNSUPPORTED_DIMENSION;
    case ErrorCode::empty_set: return MFLOW_ERR_EMPTY_SET;
    case ErrorCode::config: return MFLOW_ERR_CONFIG;
    case ErrorCode::io: return MFLOW_ERR_IO;
  }
  return MFLOW_ERR_INTERNAL;
}

template <class F>
mflow_status guard(F&& body) {
  try {
    body();
    g_last_error.clear();
    return MFLOW_OK;
  } catch (const mflow::Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown exception";
  }
  return MFLOW_ERR_INTERNAL;
}

mflow_status null_arg(const char* what) {
  g_last_error = std::string("null argument: ") + what;
  return MFLOW_ERR_INVALID_ARGUMENT;
}

mflow::Vec to_vec(const double* p, int d) { return Eigen::Map<const mflow::Vec>(p, d); }

mflow::Condition to_condition(int label) {
  return label < 0 ? mflow::Condition{} : mflow::Condition{label};
}

mflow::GuidanceConfig to_guidance(const mflow_guidance& g) {
  mflow::GuidanceConfig out;
  out.alpha = g.alpha;
  out.beta = g.beta;
  out.mg_interval = {g.mg_lo, g.mg_hi};
  out.cfg_omega = g.cfg_omega;
  out.cfg_interval = {g.cfg_lo, g.cfg_hi};
  out.unbiased = g.unbiased != 0;
  out.normalize = g.normalize != 0;
  if (g.auto_weight > 0.0) out.auto_weight = g.auto_weight;
  return out;
}

}  // namespace

extern "C" {

mflow_guidance mflow_guidance_default(void) {
  return mflow_guidance{0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0, 0, 0.0};
}

const char* mflow_last_error(void) { return g_last_error.c_str(); }

const char* mflow_status_name(mflow_status status) {
  switch (status) {
    case MFLOW_OK: return "ok";
    case MFLOW_ERR_INVALID_ARGUMENT: return "invalid-argument";
    case MFLOW_ERR_NUMERIC: return "numeric-error";
    case MFLOW_ERR_POLE_AT_DATA: return "pole-at-data";
    case MFLOW_ERR_INSUFFICIENT_OVERLAP: return "insufficient-overlap";
    case MFLOW_ERR_INVALID_STATE: return "invalid-state";
    case MFLOW_ERR_TRAINING_DIVERGED: return "training-diverged";
    case MFLOW_ERR_UNSUPPORTED_DIMENSION: return "unsupported-dimension";
    case MFLOW_ERR_EMPTY_SET: return "empty-set";
    case MFLOW_ERR_CONFIG: return "config-error";
    case MFLOW_ERR_IO: return "io-error";
    case MFLOW_ERR_CHECK_FAILED: return "check-failed";
    case MFLOW_ERR_INTERNAL: return "internal-error";
  }
  return "unknown";
}

const char* mflow_rng_name(void) { return mflow::kRngName; }

mflow_status mflow_mixture_load(const char* path, mflow_mixture** out) {
  if (!path || !out) return null_arg("path/out");
  return guard([&] { *out = new mflow_mixture{mflow::load_mixture(path)}; });
}

mflow_status mflow_mixture_parse(const char* json_text, mflow_mixture** out) {
  if (!json_text || !out) return null_arg("json_text/out");
  return guard([&] { *out = new mflow_mixture{mflow::parse_mixture(json_text)}; });
}

void mflow_mixture_free(mflow_mixture* m) { delete m; }

int mflow_mixture_dim(const mflow_mixture* m) { return m ? m->gmm.dim() : 0; }

mflow_status mflow_optimal_velocity(const mflow_mixture* m, const double* x, double t, int label, double* v_out) {
  if (!m || !x || !v_out) return null_arg("mixture/x/v_out");
  return guard([&] {
    const auto v = mflow::optimal_velocity(m->gmm, to_vec(x, m->gmm.dim()), t, to_condition(label));
    std::memcpy(v_out, v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
  });
}

mflow_status mflow_smoothed_velocity(const mflow_mixture* m, const double* x, double t, double epsilon, int label,
                                     double* v_out) {
  if (!m || !x || !v_out) return null_arg("mixture/x/v_out");
  return guard([&] {
    const auto v = mflow::smoothed_velocity(m->gmm, to_vec(x, m->gmm.dim()), t, epsilon, to_condition(label));
    std::memcpy(v_out, v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
  });
}

mflow_status mflow_log_density_and_score(const mflow_mixture* m, const double* x, double t, double* log_density,
                                         double* score_out) {
  if (!m || !x) return null_arg("mixture/x");
  return guard([&] {
    const auto ds = mflow::log_density_and_score(mflow::marginal_at(m->gmm, t), to_vec(x, m->gmm.dim()));
    if (log_density) *log_density = ds.log_density;
    if (score_out) std::memcpy(score_out, ds.score.data(), sizeof(double) * static_cast<std::size_t>(ds.score.size()));
  });
}

mflow_status mflow_sample_trajectory(const mflow_mixture* m, double epsilon, long n_steps, double shift,
                                     const mflow_guidance* g, const double* z0, int label, double* endpoint_out,
                                     long* evaluations_out) {
  if (!m || !g || !z0 || !endpoint_out) return null_arg("mixture/guidance/z0/endpoint_out");
  return guard([&] {
    const auto grid = mflow::make_shifted_grid(n_steps, shift);
    const auto cfg = to_guidance(*g);
    std::unique_ptr<mflow::VelocityField> field;
    if (epsilon == 0.0) field = std::make_unique<mflow::AnalyticField>(m->gmm);
    else field = std::make_unique<mflow::SmoothedField>(m->gmm, epsilon);
    std::unique_ptr<mflow::VelocityField> weak;
    if (cfg.auto_weight) weak = std::make_unique<mflow::SmoothedField>(m->gmm, epsilon + 0.1);
    mflow::CountingField counted(*field);
    const auto rec = mflow::sample_mg(counted, grid, to_vec(z0, m->gmm.dim()), to_condition(label), cfg, weak.get());
    std::memcpy(endpoint_out, rec.endpoint.data(), sizeof(double) * static_cast<std::size_t>(rec.endpoint.size()));
    if (evaluations_out) *evaluations_out = counted.calls();
  });
}

mflow_status mflow_experiment_load(const char* config_path, mflow_experiment** out) {
  if (!config_path || !out) return null_arg("config_path/out");
  return guard([&] { *out = new mflow_experiment{mflow::load_config(config_path)}; });
}

void mflow_experiment_free(mflow_experiment* e) { delete e; }

mflow_status mflow_experiment_override(mflow_experiment* e, const char* key, double value) {
  if (!e || !key) return null_arg("experiment/key");
  return guard([&] {
    const std::string k = key;
    auto cfg = e->cfg;
    if (k == "alpha") mflow::override_alpha(cfg, value);
    else if (k == "beta") mflow::override_beta(cfg, value);
    else if (k == "omega") mflow::override_omega(cfg, value);
    else if (k == "steps") {
      if (value != static_cast<double>(static_cast<long>(value))) mflow::fail(mflow::ErrorCode::config, "steps must be an integer");
      mflow::override_steps(cfg, static_cast<long>(value));
    } else if (k == "seed") {
      if (value < 0 || value != static_cast<double>(static_cast<std::uint64_t>(value)))
        mflow::fail(mflow::ErrorCode::config, "seed must be a non-negative integer");
      cfg.seed = static_cast<std::uint64_t>(value);
    } else {
      mflow::fail(mflow::ErrorCode::config, "unknown override key '" + k + "'");
    }
    cfg.validate();
    e->cfg = std::move(cfg);
  });
}

mflow_status mflow_experiment_set_output(mflow_experiment* e, const char* dir) {
  if (!e || !dir) return null_arg("experiment/dir");
  return guard([&] { e->cfg.output_dir = dir; });
}

mflow_status mflow_run_sample(const mflow_experiment* e) {
  if (!e) return null_arg("experiment");
  return guard([&] { mflow::sample_command(e->cfg); });
}

mflow_status mflow_run_sweep(const mflow_experiment* e) {
  if (!e) return null_arg("experiment");
  return guard([&] { mflow::sweep_command(e->cfg); });
}

mflow_status mflow_run_train(const mflow_experiment* e) {
  if (!e) return null_arg("experiment");
  return guard([&] { mflow::train_command(e->cfg); });
}

mflow_status mflow_run_toy(const mflow_experiment* e, long step_index) {
  if (!e) return null_arg("experiment");
  return guard([&] { mflow::emit_toy_panels(e->cfg, step_index < 0 ? e->cfg.toy.step_index : step_index); });
}

mflow_status mflow_run_check(const mflow_experiment* e, mflow_line_fn sink, void* user) {
  if (!e) return null_arg("experiment");
  bool passed = false;
  const auto st = guard([&] {
    const auto report = mflow::run_check(e->cfg);
    for (const auto& entry : report.entries) {
      const std::string line = std::string(entry.passed ? "PASS " : "FAIL ") + entry.name + ": " + entry.detail;
      if (sink) sink(line.c_str(), user);
    }
    passed = report.all_passed();
  });
  if (st != MFLOW_OK) return st;
  if (!passed) {
    g_last_error = "one or more checks failed";
    return MFLOW_ERR_CHECK_FAILED;
  }
  return MFLOW_OK;
}

}  // extern "C"

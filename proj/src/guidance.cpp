#include "mflow/guidance.hpp"

#include "mflow/error.hpp"

#include <cmath>

namespace mflow {

namespace {

constexpr double kNormEps = 1e-12;

void check_interval(const Interval& iv, const char* name) {
  if (!(iv.lo <= iv.hi) || iv.lo < 0.0 || iv.hi > 1.0)
    fail(ErrorCode::invalid_argument, std::string(name) + " must satisfy 0 <= lo <= hi <= 1");
}

}  // namespace

void GuidanceConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail(ErrorCode::invalid_argument, "alpha must be >= 0");
  if (!(beta >= 0.0 && beta < 1.0)) fail(ErrorCode::invalid_argument, "beta must lie in [0,1)");
  if (!(cfg_omega >= 1.0) || !std::isfinite(cfg_omega)) fail(ErrorCode::invalid_argument, "cfg_omega must be >= 1");
  check_interval(mg_interval, "mg_interval");
  check_interval(cfg_interval, "cfg_interval");
  if (auto_weight && !(*auto_weight > 1.0)) fail(ErrorCode::invalid_argument, "auto_weight must be > 1");
}

MomentumState initial_momentum(const Vec& v0, const GuidanceConfig& cfg) {
  if (cfg.unbiased) return {Vec::Zero(v0.size()), 0, MomentumInit::zero};
  return {v0, 1, MomentumInit::velocity};
}

void momentum_update(MomentumState& state, const Vec& v, double beta) {
  state.m += (1.0 - beta) * (v - state.m);
  ++state.update_count;
}

Vec momentum_read(const MomentumState& state, double beta, bool unbiased, bool normalize,
                  const Vec& v_ref) {
  Vec m_hat;
  if (unbiased) {
    if (state.init != MomentumInit::zero)
      fail(ErrorCode::invalid_state, "unbiased momentum requires a zero-initialised EMA");
    if (state.update_count < 1)
      fail(ErrorCode::invalid_state, "unbiased momentum read before any EMA update");
    m_hat = state.m / (1.0 - std::pow(beta, static_cast<double>(state.update_count)));
  } else {
    m_hat = state.m;
  }
  if (normalize) m_hat *= v_ref.norm() / (m_hat.norm() + kNormEps);
  return m_hat;
}

Vec cfg_velocity(const Vec& v_cond, const Vec& v_uncond, double omega) {
  if (!(omega >= 1.0)) fail(ErrorCode::invalid_argument, "cfg omega must be >= 1");
  if (omega == 1.0) return v_cond;
  return omega * v_cond + (1.0 - omega) * v_uncond;
}

Vec auto_velocity(const Vec& v_main, const Vec& v_weak, double weight) {
  if (!(weight > 1.0)) fail(ErrorCode::invalid_argument, "autoguidance weight must be > 1");
  return weight * v_main + (1.0 - weight) * v_weak;
}

MgStep mg_step(const Vec& z, const Vec& v_guided, const MomentumState& state, double dt,
               const GuidanceConfig& cfg, double t) {
  if (!v_guided.allFinite() || !state.m.allFinite()) fail(ErrorCode::numeric, "mg_step: non-finite input");
  MgStep out;
  auto& rec = out.record;
  rec.v_guided = v_guided;
  if (cfg.unbiased && state.update_count == 0) {
    // No history yet: the extrapolation term is zero.
    rec.m = v_guided;
    rec.g = Vec::Zero(v_guided.size());
  } else {
    rec.m = momentum_read(state, cfg.beta, cfg.unbiased, cfg.normalize, v_guided);
    rec.g = v_guided - rec.m;
  }
  rec.extrapolated = cfg.alpha != 0.0 && cfg.mg_interval.contains(t);
  rec.v_eff = rec.extrapolated ? Vec(v_guided + cfg.alpha * rec.g) : v_guided;
  out.z_next = euler_step(z, rec.v_eff, dt);
  out.state_next = state;
  momentum_update(out.state_next, v_guided, cfg.beta);
  return out;
}

long expected_evaluations(const TimeGrid& grid, const GuidanceConfig& cfg) {
  long n = 0;
  const long per_branch = cfg.auto_weight ? 2 : 1;
  for (std::size_t i = 0; i < grid.steps(); ++i) {
    n += per_branch;
    if (cfg.cfg_omega != 1.0 && cfg.cfg_interval.contains(grid[i])) n += per_branch;
  }
  return n;
}

TrajectoryRecord sample_mg(const VelocityField& field, const TimeGrid& grid, const Vec& z0,
                           Condition c, const GuidanceConfig& cfg, const VelocityField* weak_field) {
  cfg.validate();
  if (z0.size() != field.dim()) fail(ErrorCode::invalid_argument, "sample_mg: dimension mismatch");
  if (!z0.allFinite()) fail(ErrorCode::numeric, "sample_mg: non-finite initial point");
  if (cfg.cfg_omega != 1.0 && !c)
    fail(ErrorCode::invalid_argument, "sample_mg: CFG needs a class condition");
  if (cfg.auto_weight && !weak_field)
    fail(ErrorCode::invalid_argument, "sample_mg: autoguidance needs a weak field");

  auto branch = [&](const Vec& x, double t, Condition cond) -> Vec {
    if (!cfg.auto_weight) return field.evaluate(x, t, cond);
    return auto_velocity(field.evaluate(x, t, cond), weak_field->evaluate(x, t, cond), *cfg.auto_weight);
  };
  auto guided = [&](const Vec& x, double t) -> Vec {
    Vec v_cond = branch(x, t, c);
    if (cfg.cfg_omega == 1.0 || !cfg.cfg_interval.contains(t)) return v_cond;
    return cfg_velocity(v_cond, branch(x, t, std::nullopt), cfg.cfg_omega);
  };

  TrajectoryRecord rec;
  rec.steps.reserve(grid.steps());
  Vec z = z0;
  MomentumState state;
  for (std::size_t i = 0; i < grid.steps(); ++i) {
    const double t = grid[i];
    Vec v = guided(z, t);
    if (!v.allFinite()) throw StepError("sample_mg: field returned non-finite velocity", static_cast<long>(i));
    if (i == 0) state = initial_momentum(v, cfg);
    MgStep step;
    try {
      step = mg_step(z, v, state, grid.dt(i), cfg, t);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::numeric) throw;
      throw StepError(e.what(), static_cast<long>(i));
    }
    Vec x_hat = data_estimate(z, t, v);
    rec.steps.push_back({t, std::move(z), std::move(v), std::move(step.record.m),
                         std::move(step.record.g), std::move(x_hat)});
    z = std::move(step.z_next);
    state = std::move(step.state_next);
  }
  rec.endpoint = std::move(z);
  return rec;
}

}  // namespace mflow

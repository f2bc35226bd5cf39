#pragma once

#include "mflow/flow_core.hpp"

#include <atomic>
#include <optional>

namespace mflow {

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
  bool contains(double t) const { return t >= lo && t <= hi; }
};

struct GuidanceConfig {
  double alpha = 0.0;      // momentum extrapolation weight, >= 0
  double beta = 0.0;       // EMA decay in [0, 1)
  Interval mg_interval{};  // extrapolation active for t_i in [lo, hi]
  double cfg_omega = 1.0;  // >= 1; 1 disables the unconditional branch
  Interval cfg_interval{};
  bool unbiased = false;   // zero-initialised EMA with 1/(1 - beta^s) correction
  bool normalize = false;  // rescale momentum to the current velocity's norm
  std::optional<double> auto_weight;  // > 1 enables autoguidance against a weak field

  void validate() const;
};

enum class MomentumInit { velocity, zero };

struct MomentumState {
  Vec m;
  long update_count = 0;
  MomentumInit init = MomentumInit::velocity;
};

// State before the first step: m = v0 (counted as one update) for the
// velocity-initialised EMA, m = 0 with no updates for the unbiased one.
MomentumState initial_momentum(const Vec& v0, const GuidanceConfig& cfg);

// m <- (1 - beta) v + beta m, written as m + (1 - beta)(v - m) so that a
// constant stream leaves m bit-identical.
void momentum_update(MomentumState& state, const Vec& v, double beta);

// Momentum as seen by the extrapolation: raw, debiased, and/or rescaled to |v_ref|.
Vec momentum_read(const MomentumState& state, double beta, bool unbiased, bool normalize,
                  const Vec& v_ref);

Vec cfg_velocity(const Vec& v_cond, const Vec& v_uncond, double omega);
Vec auto_velocity(const Vec& v_main, const Vec& v_weak, double weight);

struct EffectiveVelocity {
  Vec v_eff;
  Vec v_guided;
  Vec m;  // momentum as read for this step
  Vec g;  // extrapolation term v_guided - m
  bool extrapolated = false;
};

struct MgStep {
  Vec z_next;
  MomentumState state_next;
  EffectiveVelocity record;
};

MgStep mg_step(const Vec& z, const Vec& v_guided, const MomentumState& state, double dt,
               const GuidanceConfig& cfg, double t);

// Guided Euler sampler: CFG (interval-gated), optional autoguidance, and
// momentum guidance on top. One field evaluation per step per active branch;
// the step-0 evaluation also seeds the momentum.
TrajectoryRecord sample_mg(const VelocityField& field, const TimeGrid& grid, const Vec& z0,
                           Condition c, const GuidanceConfig& cfg,
                           const VelocityField* weak_field = nullptr);

// Counts evaluate() calls on a wrapped field.
class CountingField final : public VelocityField {
 public:
  explicit CountingField(const VelocityField& inner) : inner_(inner) {}
  int dim() const override { return inner_.dim(); }
  Vec evaluate(const Vec& x, double t, Condition c) const override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return inner_.evaluate(x, t, c);
  }
  long calls() const { return calls_.load(); }
  void reset() { calls_ = 0; }

 private:
  const VelocityField& inner_;
  mutable std::atomic<long> calls_{0};
};

// Expected evaluations per trajectory: N, plus one per step with t_i in the
// CFG interval when omega > 1 (doubled again under autoguidance).
long expected_evaluations(const TimeGrid& grid, const GuidanceConfig& cfg);

}  // namespace mflow

#pragma once

#include <Eigen/Core>

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace mflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Class label for conditional fields; std::nullopt is the unconditional branch.
using Condition = std::optional<int>;

// Ordered time nodes 0 = t_0 < t_1 < ... < t_N = 1.
class TimeGrid {
 public:
  // Validates the invariants; throws invalid-argument otherwise.
  explicit TimeGrid(std::vector<double> nodes);

  std::size_t steps() const { return nodes_.size() - 1; }
  double operator[](std::size_t i) const { return nodes_[i]; }
  double dt(std::size_t i) const { return nodes_[i + 1] - nodes_[i]; }
  std::span<const double> nodes() const { return nodes_; }

 private:
  std::vector<double> nodes_;
};

TimeGrid make_uniform_grid(long n_steps);

// Rational resolution shift u -> s*u / (1 + (s-1)*u); s = 1 is the uniform grid.
TimeGrid make_shifted_grid(long n_steps, double shift);

// The velocity contract shared by the analytic oracle, the smoothed oracle,
// the MLP and guidance wrappers. Implementations must be deterministic and
// safe to call concurrently through a const reference.
class VelocityField {
 public:
  virtual ~VelocityField() = default;
  virtual int dim() const = 0;
  virtual Vec evaluate(const Vec& x, double t, Condition c) const = 0;
};

struct TrajectoryStep {
  double t;
  Vec z;
  Vec v;
  Vec m;
  Vec g;
  Vec x_hat;
};

struct TrajectoryRecord {
  std::vector<TrajectoryStep> steps;
  Vec endpoint;
};

Vec euler_step(const Vec& z, const Vec& v, double dt);

// x + (1 - t) v: the clean-sample estimate implied by a velocity.
Vec data_estimate(const Vec& z, double t, const Vec& v);

// Unguided Euler integration from t = 0 to t = 1. Momentum and extrapolation
// columns of the record are zero.
TrajectoryRecord integrate(const VelocityField& field, const TimeGrid& grid,
                           const Vec& z0, Condition c = std::nullopt);

bool all_finite(const Vec& v);

// CSV: step,t,z_*,v_*,m_*,g_*,xhat_* with 17 significant digits.
void write_trajectory_csv(std::ostream& os, const TrajectoryRecord& record);

}  // namespace mflow

#include "mflow/flow_core.hpp"

#include "mflow/error.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

namespace mflow {

TimeGrid::TimeGrid(std::vector<double> nodes) : nodes_(std::move(nodes)) {
  if (nodes_.size() < 2) fail(ErrorCode::invalid_argument, "time grid needs at least one step");
  if (nodes_.front() != 0.0 || nodes_.back() != 1.0)
    fail(ErrorCode::invalid_argument, "time grid must start at 0 and end at 1");
  for (std::size_t i = 1; i < nodes_.size(); ++i) {
    if (!(nodes_[i] > nodes_[i - 1]))
      fail(ErrorCode::invalid_argument,
           "time grid not strictly increasing at node " + std::to_string(i));
  }
}

TimeGrid make_uniform_grid(long n_steps) {
  return make_shifted_grid(n_steps, 1.0);
}

TimeGrid make_shifted_grid(long n_steps, double shift) {
  if (n_steps < 1) fail(ErrorCode::invalid_argument, "n_steps must be >= 1");
  if (!(shift >= 1.0) || !std::isfinite(shift))
    fail(ErrorCode::invalid_argument, "grid shift must be a finite value >= 1");
  std::vector<double> nodes(static_cast<std::size_t>(n_steps) + 1);
  for (long i = 0; i <= n_steps; ++i) {
    const double u = static_cast<double>(i) / static_cast<double>(n_steps);
    nodes[i] = shift == 1.0 ? u : shift * u / (1.0 + (shift - 1.0) * u);
  }
  nodes.front() = 0.0;
  nodes.back() = 1.0;
  return TimeGrid(std::move(nodes));
}

bool all_finite(const Vec& v) { return v.allFinite(); }

Vec euler_step(const Vec& z, const Vec& v, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) fail(ErrorCode::numeric, "euler_step: dt must be positive and finite");
  if (z.size() != v.size()) fail(ErrorCode::invalid_argument, "euler_step: dimension mismatch");
  if (!z.allFinite() || !v.allFinite()) fail(ErrorCode::numeric, "euler_step: non-finite input");
  return z + dt * v;
}

Vec data_estimate(const Vec& z, double t, const Vec& v) {
  if (!(t >= 0.0 && t <= 1.0)) fail(ErrorCode::invalid_argument, "data_estimate: t outside [0,1]");
  return z + (1.0 - t) * v;
}

TrajectoryRecord integrate(const VelocityField& field, const TimeGrid& grid,
                           const Vec& z0, Condition c) {
  if (!z0.allFinite()) fail(ErrorCode::numeric, "integrate: non-finite initial point");
  if (z0.size() != field.dim()) fail(ErrorCode::invalid_argument, "integrate: dimension mismatch");
  TrajectoryRecord rec;
  rec.steps.reserve(grid.steps());
  const Vec zero = Vec::Zero(z0.size());
  Vec z = z0;
  for (std::size_t i = 0; i < grid.steps(); ++i) {
    const double t = grid[i];
    Vec v = field.evaluate(z, t, c);
    if (!v.allFinite()) throw StepError("integrate: field returned non-finite velocity", static_cast<long>(i));
    Vec x_hat = data_estimate(z, t, v);
    Vec z_next = euler_step(z, v, grid.dt(i));
    rec.steps.push_back({t, std::move(z), std::move(v), zero, zero, std::move(x_hat)});
    z = std::move(z_next);
  }
  rec.endpoint = std::move(z);
  return rec;
}

namespace {

void put(std::ostream& os, double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  os << buf;
}

void put_vec(std::ostream& os, const Vec& v) {
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    os << ',';
    put(os, v[j]);
  }
}

}  // namespace

void write_trajectory_csv(std::ostream& os, const TrajectoryRecord& record) {
  const Eigen::Index d = record.endpoint.size();
  os << "step,t";
  for (const char* prefix : {"z", "v", "m", "g", "xhat"})
    for (Eigen::Index j = 0; j < d; ++j) os << ',' << prefix << '_' << j;
  os << '\n';
  for (std::size_t i = 0; i < record.steps.size(); ++i) {
    const auto& s = record.steps[i];
    os << i << ',';
    put(os, s.t);
    put_vec(os, s.z);
    put_vec(os, s.v);
    put_vec(os, s.m);
    put_vec(os, s.g);
    put_vec(os, s.x_hat);
    os << '\n';
  }
}

}  // namespace mflow

#include "mflow/metrics.hpp"

#include "mflow/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace mflow {

namespace {

constexpr double kPsdTol = 1e-9;

// Squared distance from each column to its k-th nearest distinct neighbour.
std::vector<double> kth_neighbor_radii_sq(const Mat& pts, int k) {
  const Eigen::Index n = pts.cols();
  std::vector<double> radii(static_cast<std::size_t>(n));
  std::vector<double> best(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::fill(best.begin(), best.end(), std::numeric_limits<double>::infinity());
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d2 = (pts.col(i) - pts.col(j)).squaredNorm();
      // Exact duplicates are one support point.
      if (d2 == 0.0) continue;
      if (d2 < best.back()) {
        auto it = std::upper_bound(best.begin(), best.end(), d2);
        std::move_backward(it, best.end() - 1, best.end());
        *it = d2;
      }
    }
    radii[i] = best.back();
  }
  return radii;
}

// Fraction of query points inside at least one ball (center, radius^2).
double coverage(const Mat& centers, const std::vector<double>& radii_sq, const Mat& queries) {
  // Largest balls first so that covered queries exit early.
  std::vector<Eigen::Index> order(radii_sq.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return radii_sq[a] > radii_sq[b]; });
  long covered = 0;
  for (Eigen::Index q = 0; q < queries.cols(); ++q) {
    for (Eigen::Index c : order) {
      if ((queries.col(q) - centers.col(c)).squaredNorm() <= radii_sq[c]) {
        ++covered;
        break;
      }
    }
  }
  return static_cast<double>(covered) / static_cast<double>(queries.cols());
}

// Mean kernel value over distinct pairs within one set.
double within_kernel(const Mat& a, double inv_two_h2) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    double row = 0.0;
    for (Eigen::Index j = i + 1; j < a.cols(); ++j)
      row += std::exp(-(a.col(i) - a.col(j)).squaredNorm() * inv_two_h2);
    sum += row;
  }
  const double n = static_cast<double>(a.cols());
  return 2.0 * sum / (n * (n - 1.0));
}

double cross_kernel(const Mat& a, const Mat& b, double inv_two_h2) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    double row = 0.0;
    for (Eigen::Index j = 0; j < b.cols(); ++j)
      row += std::exp(-(a.col(i) - b.col(j)).squaredNorm() * inv_two_h2);
    sum += row;
  }
  return sum / (static_cast<double>(a.cols()) * static_cast<double>(b.cols()));
}

void put(std::ostream& os, double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  os << buf;
}

}  // namespace

SampleSet SampleSet::with_label(int label) const {
  if (labels.size() != static_cast<std::size_t>(size()))
    fail(ErrorCode::invalid_argument, "sample set carries no labels");
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) keep.push_back(static_cast<Eigen::Index>(i));
  SampleSet out;
  out.points.resize(points.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) out.points.col(static_cast<Eigen::Index>(i)) = points.col(keep[i]);
  out.labels.assign(keep.size(), label);
  out.provenance = provenance + "|class=" + std::to_string(label);
  return out;
}

void SampleSet::validate() const {
  if (size() == 0) fail(ErrorCode::empty_set, "sample set is empty");
  if (!points.allFinite()) fail(ErrorCode::numeric, "sample set has non-finite coordinates");
}

Eigen::Matrix2d sqrtm_psd_2x2(const Eigen::Matrix2d& m) {
  const double det = m.determinant();
  const double tr = m.trace();
  if (det < -kPsdTol || tr < -kPsdTol) fail(ErrorCode::numeric, "sqrtm_psd_2x2: matrix is not PSD");
  const double s = std::sqrt(std::max(det, 0.0));
  const double denom = std::sqrt(std::max(tr + 2.0 * s, 0.0));
  if (denom == 0.0) return Eigen::Matrix2d::Zero();
  return (m + s * Eigen::Matrix2d::Identity()) / denom;
}

GaussianFit fit_gaussian(const SampleSet& s) {
  s.validate();
  const Eigen::Index n = s.size();
  if (n < s.dim() + 1)
    fail(ErrorCode::invalid_argument, "Gaussian fit needs at least d+1 points");
  GaussianFit fit;
  fit.mean = s.points.rowwise().mean();
  const Mat centered = s.points.colwise() - fit.mean;
  fit.cov = (centered * centered.transpose()) / static_cast<double>(n - 1);
  return fit;
}

double frechet_from_moments(const GaussianFit& a, const GaussianFit& b) {
  if (a.mean.size() != b.mean.size()) fail(ErrorCode::invalid_argument, "frechet: dimension mismatch");
  double trace_sqrt;
  // Tr (S_a S_b)^{1/2} = Tr (S_a^{1/2} S_b S_a^{1/2})^{1/2}, the symmetric form.
  if (a.mean.size() == 2) {
    const Eigen::Matrix2d ra = sqrtm_psd_2x2(a.cov);
    Eigen::Matrix2d inner = ra * Eigen::Matrix2d(b.cov) * ra;
    inner = 0.5 * (inner + inner.transpose()).eval();
    trace_sqrt = sqrtm_psd_2x2(inner).trace();
  } else {
    Eigen::SelfAdjointEigenSolver<Mat> ea(a.cov);
    if (ea.eigenvalues().minCoeff() < -kPsdTol) fail(ErrorCode::numeric, "frechet: covariance not PSD");
    const Mat ra = ea.eigenvectors() * ea.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                   ea.eigenvectors().transpose();
    Mat inner = ra * b.cov * ra;
    inner = 0.5 * (inner + inner.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Mat> ei(inner);
    if (ei.eigenvalues().minCoeff() < -kPsdTol) fail(ErrorCode::numeric, "frechet: product not PSD");
    trace_sqrt = ei.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  }
  const double value = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * trace_sqrt;
  return std::max(value, 0.0);
}

double gaussian_frechet(const SampleSet& a, const SampleSet& b) {
  return frechet_from_moments(fit_gaussian(a), fit_gaussian(b));
}

PrecisionRecall knn_precision_recall(const SampleSet& real, const SampleSet& fake, int k) {
  real.validate();
  fake.validate();
  if (real.dim() != fake.dim()) fail(ErrorCode::invalid_argument, "precision/recall: dimension mismatch");
  if (k < 1 || k >= real.size() || k >= fake.size())
    fail(ErrorCode::invalid_argument, "precision/recall: k must be >= 1 and smaller than both set sizes");
  const auto real_radii = kth_neighbor_radii_sq(real.points, k);
  const auto fake_radii = kth_neighbor_radii_sq(fake.points, k);
  return {coverage(real.points, real_radii, fake.points), coverage(fake.points, fake_radii, real.points)};
}

double mmd2_rbf(const SampleSet& a, const SampleSet& b, double bandwidth) {
  if (!(bandwidth > 0.0)) fail(ErrorCode::invalid_argument, "mmd2_rbf: bandwidth must be > 0");
  a.validate();
  b.validate();
  if (a.size() < 2 || b.size() < 2) fail(ErrorCode::invalid_argument, "mmd2_rbf: need at least 2 points per set");
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  return within_kernel(a.points, inv) + within_kernel(b.points, inv) - 2.0 * cross_kernel(a.points, b.points, inv);
}

MetricReport compute_metrics(const SampleSet& real, const SampleSet& fake, int k, double mmd_bandwidth) {
  MetricReport r;
  r.frechet = gaussian_frechet(real, fake);
  const auto pr = knn_precision_recall(real, fake, k);
  r.precision = pr.precision;
  r.recall = pr.recall;
  r.mmd2 = mmd2_rbf(real, fake, mmd_bandwidth);
  r.n_real = static_cast<long>(real.size());
  r.n_fake = static_cast<long>(fake.size());
  r.k = k;
  return r;
}

void write_metric_header(std::ostream& os) { os << "frechet,precision,recall,mmd2,n_real,n_fake,k"; }

void write_metric_row(std::ostream& os, const MetricReport& r) {
  put(os, r.frechet);
  os << ',';
  put(os, r.precision);
  os << ',';
  put(os, r.recall);
  os << ',';
  put(os, r.mmd2);
  os << ',' << r.n_real << ',' << r.n_fake << ',' << r.k;
}

}  // namespace mflow

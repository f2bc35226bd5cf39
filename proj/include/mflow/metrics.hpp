#pragma once

#include "mflow/flow_core.hpp"

#include <Eigen/Core>

#include <iosfwd>
#include <string>
#include <vector>

namespace mflow {

// Points stored column-wise (d x n).
struct SampleSet {
  Mat points;
  std::vector<int> labels;  // empty or one per point
  std::string provenance;

  Eigen::Index size() const { return points.cols(); }
  int dim() const { return static_cast<int>(points.rows()); }
  // Subset with the given label.
  SampleSet with_label(int label) const;
  void validate() const;
};

struct MetricReport {
  double frechet = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double mmd2 = 0.0;
  long n_real = 0;
  long n_fake = 0;
  int k = 3;
};

// Square root of a symmetric PSD 2x2 matrix in closed form:
// sqrt(M) = (M + s I) / sqrt(tr M + 2 s), s = sqrt(det M).
Eigen::Matrix2d sqrtm_psd_2x2(const Eigen::Matrix2d& m);

struct GaussianFit {
  Vec mean;
  Mat cov;  // unbiased (n - 1)
};
GaussianFit fit_gaussian(const SampleSet& s);

// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
double frechet_from_moments(const GaussianFit& a, const GaussianFit& b);
double gaussian_frechet(const SampleSet& a, const SampleSet& b);

struct PrecisionRecall {
  double precision;
  double recall;
};
PrecisionRecall knn_precision_recall(const SampleSet& real, const SampleSet& fake, int k = 3);

// Unbiased MMD^2 with kernel exp(-|x - y|^2 / (2 h^2)).
double mmd2_rbf(const SampleSet& a, const SampleSet& b, double bandwidth);

MetricReport compute_metrics(const SampleSet& real, const SampleSet& fake, int k, double mmd_bandwidth);

void write_metric_header(std::ostream& os);
void write_metric_row(std::ostream& os, const MetricReport& r);

}  // namespace mflow

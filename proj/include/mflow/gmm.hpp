#pragma once

#include "mflow/flow_core.hpp"
#include "mflow/rng.hpp"

#include <string>
#include <vector>

namespace mflow {

struct GaussianComponent {
  double weight;
  Vec mean;
  Mat cov;
  int label;
};

// Class-labelled Gaussian mixture; the data distribution at t = 1. Each
// component caches an eigendecomposition of its covariance so that every
// marginal covariance t^2 Sigma + (1-t)^2 I is diagonal in the same basis.
class GaussianMixture {
 public:
  // Validates weights (positive, sum to 1 within 1e-12), symmetry and PSD
  // covariances, and that every label in declared_labels has a component.
  explicit GaussianMixture(std::vector<GaussianComponent> components,
                           std::vector<int> declared_labels = {});

  int dim() const { return dim_; }
  std::size_t size() const { return components_.size(); }
  const GaussianComponent& component(std::size_t k) const { return components_[k]; }
  const std::vector<GaussianComponent>& components() const { return components_; }

  // Sorted distinct labels.
  const std::vector<int>& labels() const { return labels_; }
  double class_prior(int label) const;

  // Mixture moments, optionally restricted to one class.
  Vec mean(Condition c = std::nullopt) const;
  Mat covariance(Condition c = std::nullopt) const;

  // Every covariance replaced by Sigma + epsilon I.
  GaussianMixture smoothed(double epsilon) const;

  // Draws one point; label_out receives the component label.
  Vec sample(RandomStream& rng, Condition c = std::nullopt, int* label_out = nullptr) const;

  struct Spectral {
    Mat basis;    // orthonormal eigenvectors of Sigma_k
    Vec eigen;    // eigenvalues clamped at 0
    Vec sqrt_eigen;
  };
  const Spectral& spectral(std::size_t k) const { return spectral_[k]; }

 private:
  int dim_ = 0;
  std::vector<GaussianComponent> components_;
  std::vector<Spectral> spectral_;
  std::vector<int> labels_;
};

// pi_t as a mixture: component k becomes N(t mu_k, t^2 Sigma_k + (1-t)^2 I).
struct MarginalMixture {
  double t;
  std::vector<GaussianComponent> components;
};

MarginalMixture marginal_at(const GaussianMixture& gmm, double t);

struct DensityAndScore {
  double log_density;
  Vec score;
};

// log pi_t(x) by log-sum-exp and its gradient, via a Cholesky factor of each
// marginal covariance (independent of the spectral velocity path).
DensityAndScore log_density_and_score(const MarginalMixture& m, const Vec& x);

// Posterior component responsibilities r_k(x, t), restricted to class c when
// given. Components outside the class get 0.
std::vector<double> responsibilities(const GaussianMixture& gmm, const Vec& x,
                                     double t, Condition c = std::nullopt);

// E[X1 - X0 | X_t = x] for the mixture (class-restricted when c is given).
Vec optimal_velocity(const GaussianMixture& gmm, const Vec& x, double t,
                     Condition c = std::nullopt);

Vec unconditional_velocity(const GaussianMixture& gmm, const Vec& x, double t);

// Optimal velocity of the mixture with every covariance inflated by epsilon I.
Vec smoothed_velocity(const GaussianMixture& gmm, const Vec& x, double t,
                      double epsilon, Condition c = std::nullopt);

struct McEstimate {
  Vec velocity;
  Vec stderr_;
  double effective_sample_size;
};

// Brute-force kernel regression of X1 - X0 on X_t near x using only sampling
// from pi_0 x pi_1(.|c). Independent of optimal_velocity. The effective sample
// size is min(Kish size, total kernel mass with K(0) = 1); below 50 the call
// fails with insufficient-overlap.
McEstimate mc_velocity(const GaussianMixture& gmm, const Vec& x, double t,
                       Condition c, long n_pairs, double bandwidth,
                       RandomStream& rng);

// || (t v - x)/(1-t) - score || for the analytic field.
double score_velocity_identity_check(const GaussianMixture& gmm, const Vec& x, double t);

class AnalyticField final : public VelocityField {
 public:
  explicit AnalyticField(GaussianMixture gmm) : gmm_(std::move(gmm)) {}
  int dim() const override { return gmm_.dim(); }
  Vec evaluate(const Vec& x, double t, Condition c) const override {
    return optimal_velocity(gmm_, x, t, c);
  }
  const GaussianMixture& mixture() const { return gmm_; }

 private:
  GaussianMixture gmm_;
};

// Deliberately oversmoothed stand-in for an imperfect learned field.
class SmoothedField final : public VelocityField {
 public:
  SmoothedField(const GaussianMixture& gmm, double epsilon);
  int dim() const override { return smoothed_.dim(); }
  Vec evaluate(const Vec& x, double t, Condition c) const override {
    return optimal_velocity(smoothed_, x, t, c);
  }
  double epsilon() const { return epsilon_; }

 private:
  GaussianMixture smoothed_;
  double epsilon_;
};

GaussianMixture parse_mixture(const std::string& json_text);
GaussianMixture load_mixture(const std::string& path);

}  // namespace mflow

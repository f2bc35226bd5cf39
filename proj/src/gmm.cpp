#include "mflow/gmm.hpp"

#include "mflow/error.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace mflow {

namespace {

constexpr double kWeightTol = 1e-12;
constexpr double kPsdTol = 1e-12;
// Added to every marginal covariance before inversion.
constexpr double kCovReg = 1e-12;

double log_sum_exp(const std::vector<double>& a) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : a) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (double x : a) s += std::exp(x - hi);
  return hi + std::log(s);
}

void check_time(double t, const char* who) {
  if (!(t >= 0.0 && t <= 1.0))
    fail(ErrorCode::invalid_argument, std::string(who) + ": t outside [0,1]");
}

bool has_label(const GaussianMixture& gmm, int label) {
  const auto& ls = gmm.labels();
  return std::binary_search(ls.begin(), ls.end(), label);
}

void check_condition(const GaussianMixture& gmm, Condition c) {
  if (c && !has_label(gmm, *c))
    fail(ErrorCode::invalid_argument, "no mixture component carries class " + std::to_string(*c));
}

// Per-component log N(x; t mu, S) and the spectral coordinates y = U^T (x - t mu)
// together with s = diag of U^T S U.
struct ComponentTerms {
  std::vector<double> log_joint;  // log w_k + log N, -inf outside class
  std::vector<Vec> coords;
  std::vector<Vec> spectrum;
};

ComponentTerms component_terms(const GaussianMixture& gmm, const Vec& x, double t, Condition c) {
  const int d = gmm.dim();
  if (x.size() != d) fail(ErrorCode::invalid_argument, "point dimension does not match mixture");
  if (!x.allFinite()) fail(ErrorCode::numeric, "non-finite query point");
  const double one_minus_t = 1.0 - t;
  const double log_norm = 0.5 * d * std::log(2.0 * std::numbers::pi);
  ComponentTerms out;
  out.log_joint.resize(gmm.size());
  out.coords.resize(gmm.size());
  out.spectrum.resize(gmm.size());
  for (std::size_t k = 0; k < gmm.size(); ++k) {
    const auto& comp = gmm.component(k);
    const auto& sp = gmm.spectral(k);
    if (c && comp.label != *c) {
      out.log_joint[k] = -std::numeric_limits<double>::infinity();
      continue;
    }
    Vec s = (t * t) * sp.eigen.array() + one_minus_t * one_minus_t;
    if ((s.array() <= 0.0).any())
      fail(ErrorCode::pole_at_data, "singular marginal covariance at t = 1 (point-mass component)");
    s.array() += kCovReg;
    Vec y = sp.basis.transpose() * (x - t * comp.mean);
    double quad = (y.array().square() / s.array()).sum();
    double logdet = s.array().log().sum();
    out.log_joint[k] = std::log(comp.weight) - 0.5 * logdet - 0.5 * quad - log_norm;
    out.coords[k] = std::move(y);
    out.spectrum[k] = std::move(s);
  }
  return out;
}

std::vector<double> normalize_log(const std::vector<double>& log_joint) {
  const double lse = log_sum_exp(log_joint);
  if (!std::isfinite(lse)) fail(ErrorCode::numeric, "mixture density underflow");
  std::vector<double> r(log_joint.size());
  for (std::size_t k = 0; k < r.size(); ++k) r[k] = std::exp(log_joint[k] - lse);
  return r;
}

}  // namespace

GaussianMixture::GaussianMixture(std::vector<GaussianComponent> components,
                                 std::vector<int> declared_labels)
    : components_(std::move(components)) {
  if (components_.empty()) fail(ErrorCode::invalid_argument, "mixture has no components");
  dim_ = static_cast<int>(components_.front().mean.size());
  if (dim_ < 1) fail(ErrorCode::invalid_argument, "mixture dimension must be >= 1");
  double total = 0.0;
  for (std::size_t k = 0; k < components_.size(); ++k) {
    const auto& comp = components_[k];
    const std::string where = "component " + std::to_string(k) + ": ";
    if (!(comp.weight > 0.0) || !std::isfinite(comp.weight))
      fail(ErrorCode::invalid_argument, where + "weight must be positive");
    if (comp.mean.size() != dim_ || comp.cov.rows() != dim_ || comp.cov.cols() != dim_)
      fail(ErrorCode::invalid_argument, where + "shape does not match dim " + std::to_string(dim_));
    if (!comp.mean.allFinite() || !comp.cov.allFinite())
      fail(ErrorCode::invalid_argument, where + "non-finite parameters");
    if ((comp.cov - comp.cov.transpose()).cwiseAbs().maxCoeff() > kPsdTol)
      fail(ErrorCode::invalid_argument, where + "covariance is not symmetric");
    total += comp.weight;

    Eigen::SelfAdjointEigenSolver<Mat> es(comp.cov);
    if (es.eigenvalues().minCoeff() < -kPsdTol)
      fail(ErrorCode::invalid_argument, where + "covariance is not positive semidefinite");
    Spectral sp;
    sp.basis = es.eigenvectors();
    sp.eigen = es.eigenvalues().cwiseMax(0.0);
    sp.sqrt_eigen = sp.eigen.cwiseSqrt();
    spectral_.push_back(std::move(sp));
    labels_.push_back(comp.label);
  }
  if (std::abs(total - 1.0) > kWeightTol) {
    std::ostringstream msg;
    msg.precision(15);
    msg << "mixture weights sum to " << total << ", expected 1";
    fail(ErrorCode::invalid_argument, msg.str());
  }
  std::sort(labels_.begin(), labels_.end());
  labels_.erase(std::unique(labels_.begin(), labels_.end()), labels_.end());
  for (int label : declared_labels) {
    if (!std::binary_search(labels_.begin(), labels_.end(), label))
      fail(ErrorCode::invalid_argument, "declared class " + std::to_string(label) + " has no component");
  }
}

double GaussianMixture::class_prior(int label) const {
  double p = 0.0;
  for (const auto& comp : components_)
    if (comp.label == label) p += comp.weight;
  return p;
}

Vec GaussianMixture::mean(Condition c) const {
  check_condition(*this, c);
  Vec mu = Vec::Zero(dim_);
  double mass = 0.0;
  for (const auto& comp : components_) {
    if (c && comp.label != *c) continue;
    mu += comp.weight * comp.mean;
    mass += comp.weight;
  }
  return mu / mass;
}

Mat GaussianMixture::covariance(Condition c) const {
  const Vec mu = mean(c);
  Mat cov = Mat::Zero(dim_, dim_);
  double mass = 0.0;
  for (const auto& comp : components_) {
    if (c && comp.label != *c) continue;
    const Vec dm = comp.mean - mu;
    cov += comp.weight * (comp.cov + dm * dm.transpose());
    mass += comp.weight;
  }
  return cov / mass;
}

GaussianMixture GaussianMixture::smoothed(double epsilon) const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon))
    fail(ErrorCode::invalid_argument, "smoothing epsilon must be >= 0");
  auto comps = components_;
  for (auto& comp : comps) comp.cov += epsilon * Mat::Identity(dim_, dim_);
  return GaussianMixture(std::move(comps));
}

Vec GaussianMixture::sample(RandomStream& rng, Condition c, int* label_out) const {
  check_condition(*this, c);
  const double mass = c ? class_prior(*c) : 1.0;
  double u = rng.uniform() * mass;
  std::size_t pick = components_.size();
  std::size_t last_eligible = 0;
  for (std::size_t k = 0; k < components_.size(); ++k) {
    if (c && components_[k].label != *c) continue;
    last_eligible = k;
    u -= components_[k].weight;
    if (u < 0.0) {
      pick = k;
      break;
    }
  }
  if (pick == components_.size()) pick = last_eligible;
  Vec z(dim_);
  for (int j = 0; j < dim_; ++j) z[j] = rng.normal();
  const auto& sp = spectral_[pick];
  if (label_out) *label_out = components_[pick].label;
  return components_[pick].mean + sp.basis * sp.sqrt_eigen.cwiseProduct(z);
}

MarginalMixture marginal_at(const GaussianMixture& gmm, double t) {
  check_time(t, "marginal_at");
  MarginalMixture m{t, gmm.components()};
  const Mat eye = Mat::Identity(gmm.dim(), gmm.dim());
  for (auto& comp : m.components) {
    comp.mean = t * comp.mean;
    comp.cov = (t * t) * comp.cov + (1.0 - t) * (1.0 - t) * eye;
  }
  return m;
}

DensityAndScore log_density_and_score(const MarginalMixture& m, const Vec& x) {
  if (!x.allFinite()) fail(ErrorCode::numeric, "log_density_and_score: non-finite point");
  const auto d = x.size();
  const double log_norm = 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
  std::vector<double> log_joint(m.components.size());
  std::vector<Vec> comp_scores(m.components.size());
  for (std::size_t k = 0; k < m.components.size(); ++k) {
    const auto& comp = m.components[k];
    if (comp.mean.size() != d) fail(ErrorCode::invalid_argument, "log_density_and_score: dimension mismatch");
    Mat cov = comp.cov;
    cov.diagonal().array() += kCovReg;
    Eigen::LLT<Mat> llt(cov);
    if (llt.info() != Eigen::Success)
      fail(ErrorCode::numeric, "degenerate marginal covariance in component " + std::to_string(k));
    const Mat& l = llt.matrixL();
    const double logdet = 2.0 * l.diagonal().array().log().sum();
    if (!std::isfinite(logdet)) fail(ErrorCode::numeric, "degenerate marginal covariance");
    const Vec diff = x - comp.mean;
    const Vec solved = llt.solve(diff);
    log_joint[k] = std::log(comp.weight) - 0.5 * logdet - 0.5 * diff.dot(solved) - log_norm;
    comp_scores[k] = -solved;
  }
  const auto r = normalize_log(log_joint);
  Vec score = Vec::Zero(d);
  for (std::size_t k = 0; k < r.size(); ++k) score += r[k] * comp_scores[k];
  return {log_sum_exp(log_joint), score};
}

std::vector<double> responsibilities(const GaussianMixture& gmm, const Vec& x, double t, Condition c) {
  check_time(t, "responsibilities");
  check_condition(gmm, c);
  return normalize_log(component_terms(gmm, x, t, c).log_joint);
}

Vec optimal_velocity(const GaussianMixture& gmm, const Vec& x, double t, Condition c) {
  check_time(t, "optimal_velocity");
  check_condition(gmm, c);
  const auto terms = component_terms(gmm, x, t, c);
  const auto r = normalize_log(terms.log_joint);
  const double one_minus_t = 1.0 - t;
  Vec v = Vec::Zero(gmm.dim());
  for (std::size_t k = 0; k < gmm.size(); ++k) {
    if (r[k] == 0.0) continue;
    const auto& sp = gmm.spectral(k);
    // E[X1|x] - E[X0|x] = mu + (t Sigma - (1-t) I) S^{-1} (x - t mu)
    const Vec coef = (t * sp.eigen.array() - one_minus_t) / terms.spectrum[k].array();
    v += r[k] * (gmm.component(k).mean + sp.basis * coef.cwiseProduct(terms.coords[k]));
  }
  return v;
}

Vec unconditional_velocity(const GaussianMixture& gmm, const Vec& x, double t) {
  return optimal_velocity(gmm, x, t, std::nullopt);
}

Vec smoothed_velocity(const GaussianMixture& gmm, const Vec& x, double t, double epsilon, Condition c) {
  if (epsilon == 0.0) return optimal_velocity(gmm, x, t, c);
  return optimal_velocity(gmm.smoothed(epsilon), x, t, c);
}

SmoothedField::SmoothedField(const GaussianMixture& gmm, double epsilon)
    : smoothed_(gmm.smoothed(epsilon)), epsilon_(epsilon) {}

McEstimate mc_velocity(const GaussianMixture& gmm, const Vec& x, double t, Condition c,
                       long n_pairs, double bandwidth, RandomStream& rng) {
  if (n_pairs < 1000) fail(ErrorCode::invalid_argument, "mc_velocity: n_pairs must be >= 1000");
  if (!(bandwidth > 0.0)) fail(ErrorCode::invalid_argument, "mc_velocity: bandwidth must be > 0");
  if (!(t > 0.0 && t < 1.0)) fail(ErrorCode::invalid_argument, "mc_velocity: t must lie in (0,1)");
  if (x.size() != gmm.dim()) fail(ErrorCode::invalid_argument, "mc_velocity: dimension mismatch");
  const int d = gmm.dim();
  Mat targets(d, n_pairs);
  std::vector<double> log_k(static_cast<std::size_t>(n_pairs));
  const double inv_two_h2 = 1.0 / (2.0 * bandwidth * bandwidth);
  double hi = -std::numeric_limits<double>::infinity();
  Vec x0(d);
  for (long i = 0; i < n_pairs; ++i) {
    for (int j = 0; j < d; ++j) x0[j] = rng.normal();
    const Vec x1 = gmm.sample(rng, c);
    const Vec xt = t * x1 + (1.0 - t) * x0;
    targets.col(i) = x1 - x0;
    log_k[i] = -(xt - x).squaredNorm() * inv_two_h2;
    hi = std::max(hi, log_k[i]);
  }
  double sw = 0.0, sw2 = 0.0;
  Vec acc = Vec::Zero(d);
  std::vector<double> w(log_k.size());
  for (long i = 0; i < n_pairs; ++i) {
    w[i] = std::exp(log_k[i] - hi);
    sw += w[i];
    sw2 += w[i] * w[i];
    acc += w[i] * targets.col(i);
  }
  // Kish size of the self-normalised weights, capped by the raw kernel mass
  // (K(0) = 1): far from every pair the normalised weights look uniform even
  // though nothing lies under the kernel.
  const double kish = sw * sw / sw2;
  const double mass = std::exp(hi) * sw;
  const double ess = std::min(kish, mass);
  if (!(ess >= 50.0)) {
    fail(ErrorCode::insufficient_overlap,
         "mc_velocity: effective sample size " + std::to_string(ess) + " below 50");
  }
  const Vec est = acc / sw;
  Vec var = Vec::Zero(d);
  for (long i = 0; i < n_pairs; ++i)
    var += (w[i] * w[i]) * (targets.col(i) - est).array().square().matrix();
  return {est, var.cwiseSqrt() / sw, ess};
}

double score_velocity_identity_check(const GaussianMixture& gmm, const Vec& x, double t) {
  if (!(t >= 0.0 && t < 1.0)) fail(ErrorCode::invalid_argument, "identity check needs t in [0,1)");
  const Vec v = optimal_velocity(gmm, x, t);
  const auto ds = log_density_and_score(marginal_at(gmm, t), x);
  return ((t * v - x) / (1.0 - t) - ds.score).norm();
}

GaussianMixture parse_mixture(const std::string& json_text) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorCode::config, std::string("mixture file: ") + e.what());
  }
  try {
    const int d = doc.at("dim").get<int>();
    if (d < 1) fail(ErrorCode::config, "mixture file: dim must be >= 1");
    std::vector<GaussianComponent> comps;
    for (const auto& jc : doc.at("components")) {
      GaussianComponent comp;
      comp.weight = jc.at("weight").get<double>();
      const auto mean = jc.at("mean").get<std::vector<double>>();
      const auto cov = jc.at("cov").get<std::vector<std::vector<double>>>();
      if (static_cast<int>(mean.size()) != d || static_cast<int>(cov.size()) != d)
        fail(ErrorCode::config, "mixture file: component " + std::to_string(comps.size()) +
                                    " does not match dim " + std::to_string(d));
      comp.mean = Eigen::Map<const Vec>(mean.data(), d);
      comp.cov.resize(d, d);
      for (int r = 0; r < d; ++r) {
        if (static_cast<int>(cov[r].size()) != d) fail(ErrorCode::config, "mixture file: covariance row length");
        for (int col = 0; col < d; ++col) comp.cov(r, col) = cov[r][col];
      }
      comp.label = jc.at("class").get<int>();
      comps.push_back(std::move(comp));
    }
    std::vector<int> declared;
    if (doc.contains("classes")) declared = doc.at("classes").get<std::vector<int>>();
    return GaussianMixture(std::move(comps), std::move(declared));
  } catch (const json::exception& e) {
    fail(ErrorCode::config, std::string("mixture file: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::config) throw;
    fail(ErrorCode::config, std::string("mixture validation failed: ") + e.what());
  }
}

GaussianMixture load_mixture(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open mixture file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_mixture(ss.str());
}

}  // namespace mflow

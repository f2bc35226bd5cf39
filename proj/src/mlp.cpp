#include "mflow/mlp.hpp"

#include "mflow/error.hpp"
#include "mflow/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace mflow {

namespace {

struct Activations {
  Mat input, a1, a2, out;
};

Mat time_features(const Mat& x, const Vec& t) {
  const Eigen::Index d = x.rows();
  Mat u(d + 3, x.cols());
  u.topRows(d) = x;
  for (Eigen::Index b = 0; b < x.cols(); ++b) {
    const double phase = 2.0 * std::numbers::pi * t[b];
    u(d, b) = t[b];
    u(d + 1, b) = std::sin(phase);
    u(d + 2, b) = std::cos(phase);
  }
  return u;
}

int embed_column(const MlpParams& p, int c) {
  if (c < 0) return p.unconditional_column();
  if (c >= p.n_classes) fail(ErrorCode::invalid_argument, "class " + std::to_string(c) + " outside embedding table");
  return c;
}

Activations forward_batch(const MlpParams& p, const Mat& x, const Vec& t, const std::vector<int>& classes) {
  Activations act;
  act.input = time_features(x, t);
  Mat h1 = p.w1 * act.input;
  h1.colwise() += p.b1;
  for (Eigen::Index b = 0; b < x.cols(); ++b) h1.col(b) += p.embed.col(embed_column(p, classes[b]));
  act.a1 = h1.array().tanh();
  Mat h2 = p.w2 * act.a1;
  h2.colwise() += p.b2;
  act.a2 = h2.array().tanh();
  act.out = p.w3 * act.a2;
  act.out.colwise() += p.b3;
  return act;
}

void fill_uniform(Mat& m, double a, RandomStream& rng) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = a * (2.0 * rng.uniform() - 1.0);
}

void fill_uniform(Vec& v, double a, RandomStream& rng) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = a * (2.0 * rng.uniform() - 1.0);
}

template <class F>
void for_each_block(MlpParams& p, F&& f) {
  f(p.w1.data(), p.w1.size());
  f(p.b1.data(), p.b1.size());
  f(p.embed.data(), p.embed.size());
  f(p.w2.data(), p.w2.size());
  f(p.b2.data(), p.b2.size());
  f(p.w3.data(), p.w3.size());
  f(p.b3.data(), p.b3.size());
}

}  // namespace

MlpParams MlpParams::zeros(int dim, int hidden, int n_classes) {
  if (dim < 1 || hidden < 1 || n_classes < 0) fail(ErrorCode::invalid_argument, "invalid MLP shape");
  MlpParams p;
  p.dim = dim;
  p.hidden = hidden;
  p.n_classes = n_classes;
  p.w1 = Mat::Zero(hidden, dim + 3);
  p.b1 = Vec::Zero(hidden);
  p.embed = Mat::Zero(hidden, n_classes + 1);
  p.w2 = Mat::Zero(hidden, hidden);
  p.b2 = Vec::Zero(hidden);
  p.w3 = Mat::Zero(dim, hidden);
  p.b3 = Vec::Zero(dim);
  return p;
}

MlpParams MlpParams::random(int dim, int hidden, int n_classes, std::uint64_t seed) {
  MlpParams p = zeros(dim, hidden, n_classes);
  RandomStream rng(seed, StreamDomain::init, 0);
  const double a1 = 1.0 / std::sqrt(static_cast<double>(p.input_size()));
  const double a2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  fill_uniform(p.w1, a1, rng);
  fill_uniform(p.b1, a1, rng);
  fill_uniform(p.embed, a1, rng);
  fill_uniform(p.w2, a2, rng);
  fill_uniform(p.b2, a2, rng);
  fill_uniform(p.w3, a2, rng);
  fill_uniform(p.b3, a2, rng);
  return p;
}

std::size_t MlpParams::parameter_count() const {
  return static_cast<std::size_t>(w1.size() + b1.size() + embed.size() + w2.size() + b2.size() +
                                  w3.size() + b3.size());
}

Vec MlpParams::flatten() const {
  Vec flat(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index at = 0;
  for_each_block(const_cast<MlpParams&>(*this), [&](double* data, Eigen::Index n) {
    flat.segment(at, n) = Eigen::Map<const Vec>(data, n);
    at += n;
  });
  return flat;
}

void MlpParams::assign(const Vec& flat) {
  if (flat.size() != static_cast<Eigen::Index>(parameter_count()))
    fail(ErrorCode::invalid_argument, "flat parameter vector has the wrong length");
  Eigen::Index at = 0;
  for_each_block(*this, [&](double* data, Eigen::Index n) {
    Eigen::Map<Vec>(data, n) = flat.segment(at, n);
    at += n;
  });
}

void MlpParams::validate() const {
  const bool shapes = w1.rows() == hidden && w1.cols() == dim + 3 && b1.size() == hidden &&
                      embed.rows() == hidden && embed.cols() == n_classes + 1 && w2.rows() == hidden &&
                      w2.cols() == hidden && b2.size() == hidden && w3.rows() == dim &&
                      w3.cols() == hidden && b3.size() == dim;
  if (!shapes) fail(ErrorCode::invalid_argument, "MLP parameter shapes are inconsistent");
  if (!flatten().allFinite()) fail(ErrorCode::numeric, "MLP parameters are not finite");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    fail(ErrorCode::invalid_argument, "learning_rate must be > 0");
  if (batch_size < 1) fail(ErrorCode::invalid_argument, "batch_size must be >= 1");
  if (steps < 0) fail(ErrorCode::invalid_argument, "steps must be >= 0");
  if (!(p_drop >= 0.0 && p_drop <= 1.0)) fail(ErrorCode::invalid_argument, "p_drop must lie in [0,1]");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) fail(ErrorCode::invalid_argument, "ema_decay must lie in [0,1)");
  if (hidden < 1) fail(ErrorCode::invalid_argument, "hidden width must be >= 1");
}

Vec mlp_forward(const MlpParams& params, const Vec& x, double t, Condition c) {
  if (x.size() != params.dim) fail(ErrorCode::invalid_argument, "mlp_forward: input dimension mismatch");
  if (!(t >= 0.0 && t <= 1.0)) fail(ErrorCode::invalid_argument, "mlp_forward: t outside [0,1]");
  Vec tv(1);
  tv[0] = t;
  const std::vector<int> cls{c ? *c : -1};
  if (c && *c < 0) fail(ErrorCode::invalid_argument, "negative class label");
  return forward_batch(params, x, tv, cls).out.col(0);
}

LossAndGrad loss_and_grad(const MlpParams& p, const TrainBatch& batch) {
  const Eigen::Index n = batch.x0.cols();
  if (n == 0) fail(ErrorCode::invalid_argument, "loss_and_grad: empty batch");
  if (batch.x1.cols() != n || batch.t.size() != n || static_cast<Eigen::Index>(batch.classes.size()) != n ||
      batch.x0.rows() != p.dim || batch.x1.rows() != p.dim)
    fail(ErrorCode::invalid_argument, "loss_and_grad: batch shape mismatch");

  Mat xt(p.dim, n);
  for (Eigen::Index b = 0; b < n; ++b) xt.col(b) = batch.t[b] * batch.x1.col(b) + (1.0 - batch.t[b]) * batch.x0.col(b);
  const Mat target = batch.x1 - batch.x0;
  const Activations act = forward_batch(p, xt, batch.t, batch.classes);
  const Mat resid = target - act.out;
  const double inv_n = 1.0 / static_cast<double>(n);

  LossAndGrad out{resid.squaredNorm() * inv_n, MlpParams::zeros(p.dim, p.hidden, p.n_classes)};
  auto& g = out.grad;
  const Mat d_out = (-2.0 * inv_n) * resid;
  g.w3 = d_out * act.a2.transpose();
  g.b3 = d_out.rowwise().sum();
  const Mat d_h2 = ((p.w3.transpose() * d_out).array() * (1.0 - act.a2.array().square())).matrix();
  g.w2 = d_h2 * act.a1.transpose();
  g.b2 = d_h2.rowwise().sum();
  const Mat d_h1 = ((p.w2.transpose() * d_h2).array() * (1.0 - act.a1.array().square())).matrix();
  g.w1 = d_h1 * act.input.transpose();
  g.b1 = d_h1.rowwise().sum();
  for (Eigen::Index b = 0; b < n; ++b) g.embed.col(embed_column(p, batch.classes[b])) += d_h1.col(b);
  return out;
}

TrainBatch draw_batch(const GaussianMixture& gmm, const TrainConfig& cfg, long step) {
  RandomStream rng(cfg.seed, StreamDomain::training, static_cast<std::uint64_t>(step));
  const int d = gmm.dim();
  TrainBatch batch;
  batch.x0.resize(d, cfg.batch_size);
  batch.x1.resize(d, cfg.batch_size);
  batch.t.resize(cfg.batch_size);
  batch.classes.resize(cfg.batch_size);
  for (int b = 0; b < cfg.batch_size; ++b) {
    int label = 0;
    batch.x1.col(b) = gmm.sample(rng, std::nullopt, &label);
    for (int j = 0; j < d; ++j) batch.x0(j, b) = rng.normal();
    batch.t[b] = rng.uniform();
    batch.classes[b] = rng.uniform() < cfg.p_drop ? -1 : label;
  }
  return batch;
}

TrainResult train(const GaussianMixture& gmm, const TrainConfig& cfg) {
  cfg.validate();
  int n_classes = 0;
  for (int label : gmm.labels()) {
    if (label < 0) fail(ErrorCode::invalid_argument, "MLP training needs non-negative class labels");
    n_classes = std::max(n_classes, label + 1);
  }
  TrainResult result{MlpParams::random(gmm.dim(), cfg.hidden, n_classes, cfg.seed), {}, {}};
  result.ema_params = result.params;
  result.loss_curve.reserve(static_cast<std::size_t>(cfg.steps));
  Vec flat = result.params.flatten();
  Vec ema = flat;
  for (long step = 0; step < cfg.steps; ++step) {
    const TrainBatch batch = draw_batch(gmm, cfg, step);
    const LossAndGrad lg = loss_and_grad(result.params, batch);
    if (!std::isfinite(lg.loss) || !lg.grad.flatten().allFinite())
      fail(ErrorCode::training_diverged, "training diverged at step " + std::to_string(step));
    result.loss_curve.push_back(lg.loss);
    flat -= cfg.learning_rate * lg.grad.flatten();
    ema = cfg.ema_decay * ema + (1.0 - cfg.ema_decay) * flat;
    result.params.assign(flat);
  }
  result.ema_params.assign(ema);
  return result;
}

namespace {

nlohmann::json matrix_json(const Mat& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Mat matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols, const char* name) {
  if (j.at("rows").get<Eigen::Index>() != rows || j.at("cols").get<Eigen::Index>() != cols)
    fail(ErrorCode::config, std::string("checkpoint: tensor ") + name + " has the wrong shape");
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    fail(ErrorCode::config, std::string("checkpoint: tensor ") + name + " has the wrong length");
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  return m;
}

nlohmann::json params_json(const MlpParams& p) {
  return {{"w1", matrix_json(p.w1)}, {"b1", matrix_json(p.b1)}, {"embed", matrix_json(p.embed)},
          {"w2", matrix_json(p.w2)}, {"b2", matrix_json(p.b2)}, {"w3", matrix_json(p.w3)},
          {"b3", matrix_json(p.b3)}};
}

MlpParams params_from_json(const nlohmann::json& j, int dim, int hidden, int n_classes) {
  MlpParams p = MlpParams::zeros(dim, hidden, n_classes);
  p.w1 = matrix_from_json(j.at("w1"), hidden, dim + 3, "w1");
  p.b1 = matrix_from_json(j.at("b1"), hidden, 1, "b1");
  p.embed = matrix_from_json(j.at("embed"), hidden, n_classes + 1, "embed");
  p.w2 = matrix_from_json(j.at("w2"), hidden, hidden, "w2");
  p.b2 = matrix_from_json(j.at("b2"), hidden, 1, "b2");
  p.w3 = matrix_from_json(j.at("w3"), dim, hidden, "w3");
  p.b3 = matrix_from_json(j.at("b3"), dim, 1, "b3");
  p.validate();
  return p;
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainResult& result, const TrainConfig& cfg) {
  const auto& p = result.params;
  nlohmann::json doc = {
      {"format", "mflow-mlp-v1"},
      {"dim", p.dim},
      {"hidden", p.hidden},
      {"n_classes", p.n_classes},
      {"train", {{"learning_rate", cfg.learning_rate}, {"batch_size", cfg.batch_size}, {"steps", cfg.steps},
                 {"p_drop", cfg.p_drop}, {"ema_decay", cfg.ema_decay}, {"seed", cfg.seed}, {"hidden", cfg.hidden}}},
      {"params", params_json(result.params)},
      {"ema_params", params_json(result.ema_params)},
  };
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io, "cannot write checkpoint " + path);
  out << doc.dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open checkpoint " + path);
  try {
    const auto doc = nlohmann::json::parse(in);
    if (doc.at("format").get<std::string>() != "mflow-mlp-v1") fail(ErrorCode::config, "checkpoint: unknown format");
    const int dim = doc.at("dim").get<int>();
    const int hidden = doc.at("hidden").get<int>();
    const int n_classes = doc.at("n_classes").get<int>();
    Checkpoint ck{params_from_json(doc.at("params"), dim, hidden, n_classes),
                  params_from_json(doc.at("ema_params"), dim, hidden, n_classes),
                  {}};
    const auto& tc = doc.at("train");
    ck.config.learning_rate = tc.at("learning_rate").get<double>();
    ck.config.batch_size = tc.at("batch_size").get<int>();
    ck.config.steps = tc.at("steps").get<long>();
    ck.config.p_drop = tc.at("p_drop").get<double>();
    ck.config.ema_decay = tc.at("ema_decay").get<double>();
    ck.config.seed = tc.at("seed").get<std::uint64_t>();
    ck.config.hidden = tc.at("hidden").get<int>();
    return ck;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config, std::string("checkpoint ") + path + ": " + e.what());
  }
}

MlpField::MlpField(MlpParams params) : params_(std::move(params)) { params_.validate(); }

}  // namespace mflow

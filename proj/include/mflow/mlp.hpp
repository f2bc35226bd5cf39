#pragma once

#include "mflow/flow_core.hpp"
#include "mflow/gmm.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mflow {

// input [x, t, sin 2 pi t, cos 2 pi t] -> tanh(hidden) -> tanh(hidden) -> d.
// The class embedding (one column per class plus a final unconditional
// column) is added to the first pre-activation.
struct MlpParams {
  int dim = 0;
  int hidden = 0;
  int n_classes = 0;
  Mat w1, w2, w3;
  Vec b1, b2, b3;
  Mat embed;  // hidden x (n_classes + 1)

  static MlpParams zeros(int dim, int hidden, int n_classes);
  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer.
  static MlpParams random(int dim, int hidden, int n_classes, std::uint64_t seed);

  int input_size() const { return dim + 3; }
  int unconditional_column() const { return n_classes; }
  std::size_t parameter_count() const;
  Vec flatten() const;
  void assign(const Vec& flat);
  void validate() const;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 256;
  long steps = 20000;
  double p_drop = 0.1;
  double ema_decay = 0.999;
  std::uint64_t seed = 7;
  int hidden = 64;

  void validate() const;
};

// One training example per column; class -1 selects the unconditional row.
struct TrainBatch {
  Mat x0;
  Mat x1;
  Vec t;
  std::vector<int> classes;
};

Vec mlp_forward(const MlpParams& params, const Vec& x, double t, Condition c);

struct LossAndGrad {
  double loss;
  MlpParams grad;
};

// mean |(x1 - x0) - f(t x1 + (1-t) x0, t, c)|^2 and its exact gradient.
LossAndGrad loss_and_grad(const MlpParams& params, const TrainBatch& batch);

struct TrainResult {
  MlpParams params;
  MlpParams ema_params;
  std::vector<double> loss_curve;
};

// Plain SGD with class dropout and a parameter EMA updated after every step.
TrainResult train(const GaussianMixture& gmm, const TrainConfig& cfg);

TrainBatch draw_batch(const GaussianMixture& gmm, const TrainConfig& cfg, long step);

void save_checkpoint(const std::string& path, const TrainResult& result, const TrainConfig& cfg);
struct Checkpoint {
  MlpParams params;
  MlpParams ema_params;
  TrainConfig config;
};
Checkpoint load_checkpoint(const std::string& path);

class MlpField final : public VelocityField {
 public:
  explicit MlpField(MlpParams params);
  int dim() const override { return params_.dim; }
  Vec evaluate(const Vec& x, double t, Condition c) const override {
    return mlp_forward(params_, x, t, c);
  }
  const MlpParams& params() const { return params_; }

 private:
  MlpParams params_;
};

}  // namespace mflow

// Command-line front end. Talks to the library only through the C API.
#include "mflow/mflow.h"

#include <CLI11.hpp>

#include <cstdio>
#include <optional>
#include <string>

namespace {

enum ExitCode { kOk = 0, kConfigError = 1, kNumericError = 2, kCheckFailed = 3 };

int exit_code(mflow_status st) {
  switch (st) {
    case MFLOW_OK: return kOk;
    case MFLOW_ERR_CHECK_FAILED: return kCheckFailed;
    case MFLOW_ERR_NUMERIC:
    case MFLOW_ERR_POLE_AT_DATA:
    case MFLOW_ERR_INSUFFICIENT_OVERLAP:
    case MFLOW_ERR_INVALID_STATE:
    case MFLOW_ERR_TRAINING_DIVERGED:
    case MFLOW_ERR_INTERNAL: return kNumericError;
    default: return kConfigError;
  }
}

int report(mflow_status st, const char* what) {
  if (st != MFLOW_OK)
    std::fprintf(stderr, "mflow %s: %s: %s\n", what, mflow_status_name(st), mflow_last_error());
  return exit_code(st);
}

struct CommonOptions {
  std::string config;
  std::optional<double> alpha, beta, omega;
  std::optional<long> steps;
  std::optional<unsigned long long> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "experiment config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--alpha", o.alpha, "momentum guidance weight");
  cmd->add_option("--beta", o.beta, "momentum EMA decay");
  cmd->add_option("--omega", o.omega, "CFG scale");
  cmd->add_option("--steps", o.steps, "number of Euler steps");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--out", o.out, "output directory");
}

mflow_status open_experiment(const CommonOptions& o, mflow_experiment** e) {
  mflow_status st = mflow_experiment_load(o.config.c_str(), e);
  if (st != MFLOW_OK) return st;
  auto apply = [&](const char* key, double v) {
    if (st == MFLOW_OK) st = mflow_experiment_override(*e, key, v);
  };
  if (o.alpha) apply("alpha", *o.alpha);
  if (o.beta) apply("beta", *o.beta);
  if (o.omega) apply("omega", *o.omega);
  if (o.steps) apply("steps", static_cast<double>(*o.steps));
  if (o.seed) apply("seed", static_cast<double>(*o.seed));
  if (st == MFLOW_OK && o.out) st = mflow_experiment_set_output(*e, o.out->c_str());
  return st;
}

void print_line(const char* line, void*) { std::printf("%s\n", line); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Momentum-guided rectified-flow sampling on Gaussian-mixture targets"};
  app.require_subcommand(1);

  CommonOptions sample_o, sweep_o, train_o, toy_o, check_o;
  long toy_step = -1;
  auto* sample = app.add_subcommand("sample", "draw guided samples; writes samples.csv and trajectory_<i>.csv");
  auto* sweep = app.add_subcommand("sweep", "grid search over alpha, beta, omega and steps; writes sweep.csv");
  auto* train = app.add_subcommand("train", "train the velocity MLP; writes checkpoint.json and loss_curve.csv");
  auto* toy = app.add_subcommand("toy", "write 2-D trajectory and velocity panels as SVG");
  auto* check = app.add_subcommand("check", "run the invariant battery");
  add_common(sample, sample_o);
  add_common(sweep, sweep_o);
  add_common(train, train_o);
  add_common(toy, toy_o);
  add_common(check, check_o);
  toy->add_option("--step", toy_step, "trajectory step for the velocity panel");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  auto run = [&](const CommonOptions& o, const char* name, auto&& action) {
    mflow_experiment* e = nullptr;
    mflow_status st = open_experiment(o, &e);
    if (st == MFLOW_OK) st = action(e);
    mflow_experiment_free(e);
    return report(st, name);
  };

  if (*sample) return run(sample_o, "sample", [](mflow_experiment* e) { return mflow_run_sample(e); });
  if (*sweep) return run(sweep_o, "sweep", [](mflow_experiment* e) { return mflow_run_sweep(e); });
  if (*train) return run(train_o, "train", [](mflow_experiment* e) { return mflow_run_train(e); });
  if (*toy) return run(toy_o, "toy", [&](mflow_experiment* e) { return mflow_run_toy(e, toy_step); });
  if (*check)
    return run(check_o, "check", [](mflow_experiment* e) { return mflow_run_check(e, print_line, nullptr); });
  return kConfigError;
}

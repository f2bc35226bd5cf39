#include "mflow/config.hpp"

#include "mflow/error.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace mflow {

namespace {

using nlohmann::json;

const char* field_name(FieldKind k) {
  switch (k) {
    case FieldKind::analytic: return "analytic";
    case FieldKind::smoothed: return "smoothed";
    case FieldKind::mlp: return "mlp";
  }
  return "?";
}

Interval interval_from(const json& j, const char* key) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 2) fail(ErrorCode::config, std::string(key) + " must be a [lo, hi] pair");
  return {v[0], v[1]};
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

template <class T>
void check_range(const std::vector<T>& r, const char* key) {
  for (std::size_t i = 1; i < r.size(); ++i)
    if (!(r[i] > r[i - 1])) fail(ErrorCode::config, std::string("sweep.") + key + " must be strictly increasing");
}

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty()) return p;
  std::filesystem::path path(p);
  if (path.is_absolute()) return p;
  return (std::filesystem::path(base) / path).lexically_normal().string();
}

const std::vector<std::string> kTopKeys = {"rng", "mixture", "field", "grid", "guidance", "sweep",
                                           "n_trajectories", "record_trajectories", "metrics", "seed",
                                           "output_dir", "train", "toy"};

}  // namespace

json guidance_to_json(const GuidanceConfig& g) {
  json j = {{"alpha", g.alpha},
            {"beta", g.beta},
            {"mg_interval", {g.mg_interval.lo, g.mg_interval.hi}},
            {"cfg_omega", g.cfg_omega},
            {"cfg_interval", {g.cfg_interval.lo, g.cfg_interval.hi}},
            {"unbiased", g.unbiased},
            {"normalize", g.normalize}};
  j["auto_weight"] = g.auto_weight ? json(*g.auto_weight) : json(nullptr);
  return j;
}

GuidanceConfig guidance_from_json(const json& j) {
  static const std::vector<std::string> keys = {"alpha", "beta", "mg_interval", "cfg_omega",
                                                "cfg_interval", "unbiased", "normalize", "auto_weight"};
  for (const auto& [k, _] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) fail(ErrorCode::config, "guidance: unknown key '" + k + "'");
  GuidanceConfig g;
  read(j, "alpha", g.alpha);
  read(j, "beta", g.beta);
  if (j.contains("mg_interval")) g.mg_interval = interval_from(j.at("mg_interval"), "mg_interval");
  read(j, "cfg_omega", g.cfg_omega);
  if (j.contains("cfg_interval")) g.cfg_interval = interval_from(j.at("cfg_interval"), "cfg_interval");
  read(j, "unbiased", g.unbiased);
  read(j, "normalize", g.normalize);
  if (j.contains("auto_weight") && !j.at("auto_weight").is_null()) g.auto_weight = j.at("auto_weight").get<double>();
  try {
    g.validate();
  } catch (const Error& e) {
    fail(ErrorCode::config, std::string("guidance: ") + e.what());
  }
  return g;
}

void ExperimentConfig::validate() const {
  try {
    guidance.validate();
    train.validate();
  } catch (const Error& e) {
    fail(ErrorCode::config, e.what());
  }
  if (mixture.empty()) fail(ErrorCode::config, "config: 'mixture' path is required");
  if (grid.n_steps < 1) fail(ErrorCode::config, "grid.n_steps must be >= 1");
  if (!(grid.shift >= 1.0)) fail(ErrorCode::config, "grid.shift must be >= 1");
  if (n_trajectories < 0) fail(ErrorCode::config, "n_trajectories must be >= 0");
  if (record_trajectories < 0) fail(ErrorCode::config, "record_trajectories must be >= 0");
  if (metrics.k < 1) fail(ErrorCode::config, "metrics.k must be >= 1");
  if (metrics.n_real < 1) fail(ErrorCode::config, "metrics.n_real must be >= 1");
  if (!(metrics.mmd_bandwidth > 0.0)) fail(ErrorCode::config, "metrics.mmd_bandwidth must be > 0");
  if (field.kind == FieldKind::smoothed && !(field.epsilon >= 0.0)) fail(ErrorCode::config, "field.epsilon must be >= 0");
  if (field.kind == FieldKind::mlp && field.checkpoint.empty()) fail(ErrorCode::config, "field.checkpoint is required for mlp");
  check_range(sweep.alpha, "alpha");
  check_range(sweep.beta, "beta");
  check_range(sweep.cfg_omega, "cfg_omega");
  check_range(sweep.n_steps, "n_steps");
  if (sweep.promote_top < 0) fail(ErrorCode::config, "sweep.promote_top must be >= 0");
  if (toy.n_trajectories < 1 || toy.step_index < 0 || toy.grid_points < 2) fail(ErrorCode::config, "toy settings out of range");
}

ExperimentConfig parse_config(const std::string& text, const std::string& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::config, std::string("config: ") + e.what());
  }
  ExperimentConfig cfg;
  try {
    for (const auto& [k, _] : doc.items())
      if (std::find(kTopKeys.begin(), kTopKeys.end(), k) == kTopKeys.end())
        fail(ErrorCode::config, "config: unknown key '" + k + "'");
    if (doc.contains("rng") && doc.at("rng").get<std::string>() != kRngName)
      fail(ErrorCode::config, "config: rng must be '" + std::string(kRngName) + "'");
    cfg.mixture = resolve(base_dir, doc.value("mixture", std::string()));
    if (doc.contains("field")) {
      const auto& f = doc.at("field");
      const std::string kind = f.value("kind", std::string("analytic"));
      if (kind == "analytic") cfg.field.kind = FieldKind::analytic;
      else if (kind == "smoothed") cfg.field.kind = FieldKind::smoothed;
      else if (kind == "mlp") cfg.field.kind = FieldKind::mlp;
      else fail(ErrorCode::config, "field.kind must be analytic, smoothed or mlp");
      read(f, "epsilon", cfg.field.epsilon);
      cfg.field.checkpoint = resolve(base_dir, f.value("checkpoint", std::string()));
      read(f, "use_ema", cfg.field.use_ema);
      read(f, "weak_epsilon", cfg.field.weak_epsilon);
    }
    if (doc.contains("grid")) {
      read(doc.at("grid"), "n_steps", cfg.grid.n_steps);
      read(doc.at("grid"), "shift", cfg.grid.shift);
    }
    if (doc.contains("guidance")) cfg.guidance = guidance_from_json(doc.at("guidance"));
    if (doc.contains("sweep")) {
      const auto& s = doc.at("sweep");
      read(s, "alpha", cfg.sweep.alpha);
      read(s, "beta", cfg.sweep.beta);
      read(s, "cfg_omega", cfg.sweep.cfg_omega);
      read(s, "n_steps", cfg.sweep.n_steps);
      read(s, "promote_top", cfg.sweep.promote_top);
    }
    read(doc, "n_trajectories", cfg.n_trajectories);
    read(doc, "record_trajectories", cfg.record_trajectories);
    if (doc.contains("metrics")) {
      read(doc.at("metrics"), "n_real", cfg.metrics.n_real);
      read(doc.at("metrics"), "k", cfg.metrics.k);
      read(doc.at("metrics"), "mmd_bandwidth", cfg.metrics.mmd_bandwidth);
    }
    read(doc, "seed", cfg.seed);
    cfg.output_dir = resolve(base_dir, doc.value("output_dir", std::string("out")));
    if (doc.contains("train")) {
      const auto& t = doc.at("train");
      read(t, "learning_rate", cfg.train.learning_rate);
      read(t, "batch_size", cfg.train.batch_size);
      read(t, "steps", cfg.train.steps);
      read(t, "p_drop", cfg.train.p_drop);
      read(t, "ema_decay", cfg.train.ema_decay);
      read(t, "seed", cfg.train.seed);
      read(t, "hidden", cfg.train.hidden);
    }
    if (doc.contains("toy")) {
      read(doc.at("toy"), "n_trajectories", cfg.toy.n_trajectories);
      read(doc.at("toy"), "step_index", cfg.toy.step_index);
      read(doc.at("toy"), "grid_points", cfg.toy.grid_points);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::config, std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::config, "cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const auto dir = std::filesystem::path(path).parent_path();
  return parse_config(ss.str(), dir.empty() ? "." : dir.string());
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["rng"] = kRngName;
  j["mixture"] = cfg.mixture;
  j["field"] = {{"kind", field_name(cfg.field.kind)}, {"epsilon", cfg.field.epsilon},
                {"checkpoint", cfg.field.checkpoint}, {"use_ema", cfg.field.use_ema},
                {"weak_epsilon", cfg.field.weak_epsilon}};
  j["grid"] = {{"n_steps", cfg.grid.n_steps}, {"shift", cfg.grid.shift}};
  j["guidance"] = guidance_to_json(cfg.guidance);
  j["sweep"] = {{"alpha", cfg.sweep.alpha}, {"beta", cfg.sweep.beta}, {"cfg_omega", cfg.sweep.cfg_omega},
                {"n_steps", cfg.sweep.n_steps}, {"promote_top", cfg.sweep.promote_top}};
  j["n_trajectories"] = cfg.n_trajectories;
  j["record_trajectories"] = cfg.record_trajectories;
  j["metrics"] = {{"n_real", cfg.metrics.n_real}, {"k", cfg.metrics.k}, {"mmd_bandwidth", cfg.metrics.mmd_bandwidth}};
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["train"] = {{"learning_rate", cfg.train.learning_rate}, {"batch_size", cfg.train.batch_size},
                {"steps", cfg.train.steps}, {"p_drop", cfg.train.p_drop}, {"ema_decay", cfg.train.ema_decay},
                {"seed", cfg.train.seed}, {"hidden", cfg.train.hidden}};
  j["toy"] = {{"n_trajectories", cfg.toy.n_trajectories}, {"step_index", cfg.toy.step_index},
              {"grid_points", cfg.toy.grid_points}};
  return j;
}

void override_alpha(ExperimentConfig& cfg, double v) {
  cfg.guidance.alpha = v;
  if (!cfg.sweep.alpha.empty()) cfg.sweep.alpha = {v};
}

void override_beta(ExperimentConfig& cfg, double v) {
  cfg.guidance.beta = v;
  if (!cfg.sweep.beta.empty()) cfg.sweep.beta = {v};
}

void override_omega(ExperimentConfig& cfg, double v) {
  cfg.guidance.cfg_omega = v;
  if (!cfg.sweep.cfg_omega.empty()) cfg.sweep.cfg_omega = {v};
}

void override_steps(ExperimentConfig& cfg, long v) {
  cfg.grid.n_steps = v;
  if (!cfg.sweep.n_steps.empty()) cfg.sweep.n_steps = {v};
}

}  // namespace mflow

#include "run_config.hpp"

#include <cmath>
#include <fstream>

#include "elliptic/errors.hpp"

namespace elliptic::cli {

void RunConfig::validate() const {
  const ModelKind kind = parse_model_kind(model);
  if (classification && kind != ModelKind::SVGP && kind != ModelKind::EPEP) {
    throw ConfigError("model '" + model + "' does not support classification (use svgp or ep-ep)");
  }
  if (inducing < 1) throw ConfigError("--inducing must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("--lr must be positive");
  if (epochs < 1) throw ConfigError("--epochs must be positive");
  if (mc_samples < 0) throw ConfigError("--mc-samples must be nonnegative");
  if (quad_nodes < 2) throw ConfigError("--quad-nodes must be at least 2");
  if (batch_size < 0) throw ConfigError("batch size must be nonnegative");
  if (patience < 0) throw ConfigError("patience must be nonnegative");
  double total = 0.0;
  for (double f : split) {
    if (!(f >= 0.0)) throw ConfigError("split fractions must be nonnegative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  if (split[0] <= 0.0) throw ConfigError("the training fraction must be positive");
}

TrainConfig RunConfig::train_config() const {
  TrainConfig c;
  c.epochs = epochs;
  c.lr = lr;
  c.batch_size = batch_size;
  c.n_mc = mc_samples;
  c.patience = patience;
  c.early_stopping = split[1] > 0.0;
  return c;
}

ModelOptions RunConfig::model_options() const {
  ModelOptions o;
  o.inducing = inducing;
  o.classification = classification;
  o.train_inducing = train_inducing;
  return o;
}

nlohmann::json to_json(const RunConfig& cfg) {
  return {{"model", cfg.model},
          {"kernel", cfg.kernel},
          {"inducing", cfg.inducing},
          {"lr", cfg.lr},
          {"epochs", cfg.epochs},
          {"mc_samples", cfg.mc_samples},
          {"quad_nodes", cfg.quad_nodes},
          {"seed", cfg.seed},
          {"data", cfg.data},
          {"target", cfg.target},
          {"features", cfg.features},
          {"classification", cfg.classification},
          {"log_target", cfg.log_target},
          {"batch_size", cfg.batch_size},
          {"patience", cfg.patience},
          {"train_inducing", cfg.train_inducing},
          {"split", cfg.split}};
}

RunConfig merge_json(RunConfig base, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run configuration must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "model") {
        base.model = value.get<std::string>();
      } else if (key == "kernel") {
        base.kernel = value.get<std::string>();
      } else if (key == "inducing") {
        base.inducing = value.get<int>();
      } else if (key == "lr") {
        base.lr = value.get<double>();
      } else if (key == "epochs") {
        base.epochs = value.get<int>();
      } else if (key == "mc_samples") {
        base.mc_samples = value.get<int>();
      } else if (key == "quad_nodes") {
        base.quad_nodes = value.get<int>();
      } else if (key == "seed") {
        base.seed = value.get<std::uint64_t>();
      } else if (key == "data") {
        base.data = value.get<std::string>();
      } else if (key == "target") {
        base.target = value.get<std::string>();
      } else if (key == "features") {
        base.features = value.get<std::vector<std::string>>();
      } else if (key == "classification") {
        base.classification = value.get<bool>();
      } else if (key == "log_target") {
        base.log_target = value.get<bool>();
      } else if (key == "batch_size") {
        base.batch_size = value.get<int>();
      } else if (key == "patience") {
        base.patience = value.get<int>();
      } else if (key == "train_inducing") {
        base.train_inducing = value.get<bool>();
      } else if (key == "split") {
        base.split = value.get<std::array<double, 3>>();
      } else {
        throw ConfigError("unknown configuration key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid run configuration: ") + e.what());
  }
  return base;
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration '" + path + "'");
  try {
    return merge_json(std::move(base), nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace elliptic::cli

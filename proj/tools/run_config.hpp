#pragma once

// Run configuration shared by the subcommands, serializable as JSON so a
// checkpoint records exactly how it was produced.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elliptic/models.hpp"
#include "elliptic/training.hpp"

namespace elliptic::cli {

struct RunConfig {
  std::string model = "svgp";
  std::string kernel = "se";
  int inducing = 500;
  double lr = 0.01;
  int epochs = 2000;
  int mc_samples = 0;  // 0 picks the per-likelihood default
  int quad_nodes = 128;
  std::uint64_t seed = 0;
  std::string data;
  std::string target = "y";
  std::vector<std::string> features;  // empty: all non-target columns
  bool classification = false;
  bool log_target = false;
  int batch_size = 0;
  int patience = 0;
  bool train_inducing = false;
  std::array<double, 3> split = {0.6, 0.2, 0.2};

  /// Throws ConfigError on inconsistent values.
  void validate() const;
  [[nodiscard]] TrainConfig train_config() const;
  [[nodiscard]] ModelOptions model_options() const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Overlays the keys present in `j` on `base`; unknown keys are rejected.
RunConfig merge_json(RunConfig base, const nlohmann::json& j);
RunConfig load_run_config(const std::string& path, RunConfig base = {});

}  // namespace elliptic::cli

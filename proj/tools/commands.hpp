#pragma once

// Subcommand implementations. Each writes its files and a short report to
// `log`, and throws elliptic::Error on failure.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "run_config.hpp"

namespace elliptic::cli {

/// Writes <out_dir>/checkpoint.json and <out_dir>/trace.csv.
void cmd_train(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log);

struct PredictArgs {
  std::string checkpoint;
  std::string data;
  std::string out;  // predictions CSV; mixing samples go to <stem>_mixing.csv
  int n_xi = 64;
  int mixing_samples = 1000;
  std::uint64_t seed = 0;
};

void cmd_predict(const PredictArgs& args, std::ostream& log);

struct EvalArgs {
  std::string checkpoint;
  std::string data;          // defaults to the training data recorded in the checkpoint
  std::string split = "test";  // train | val | test | all
  int folds = 0;             // > 0 retrains on that many seeded splits
  std::string out;           // metrics JSON; empty prints to `log`
};

void cmd_eval(const EvalArgs& args, std::ostream& log);

struct FitNoiseArgs {
  std::string data;
  std::string column = "r";
  std::string out;  // fitted model JSON
  int iterations = 3000;
  double lr = 0.02;
  int bins = 9;
  int quad_nodes = 128;
};

void cmd_fit_noise(const FitNoiseArgs& args, std::ostream& log);

struct SimulateArgs {
  std::string generator;  // gauss | student4 | cauchy | hetero | clusters
  int n = 200;
  std::uint64_t seed = 0;
  double flip = 0.05;
  std::string out;
};

void cmd_simulate(const SimulateArgs& args, std::ostream& log);

/// Path of the companion mixing-sample CSV for a predictions file.
std::filesystem::path mixing_path(const std::filesystem::path& predictions);

}  // namespace elliptic::cli

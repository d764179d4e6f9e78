#include "cli.hpp"

#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "commands.hpp"
#include "elliptic/errors.hpp"
#include "run_config.hpp"

namespace elliptic::cli {
namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Binds the RunConfig flags of `train`; returns (option, JSON key) pairs so
/// explicitly given flags can be overlaid on a configuration file.
std::vector<std::pair<CLI::Option*, std::string>> add_run_options(CLI::App& app, RunConfig& c,
                                                                 std::vector<double>& split) {
  std::vector<std::pair<CLI::Option*, std::string>> opts;
  auto add = [&](CLI::Option* o, const char* key) { opts.emplace_back(o, key); };
  add(app.add_option("--model", c.model, "exact-gp | svgp | ep-gp | ep-ep | het-gp | het-ep"), "model");
  add(app.add_option("--kernel", c.kernel, "se, periodic, linear or a '+'-joined sum"), "kernel");
  add(app.add_option("--inducing", c.inducing, "number of inducing points M"), "inducing");
  add(app.add_option("--lr", c.lr, "Adam learning rate"), "lr");
  add(app.add_option("--epochs", c.epochs, "training epochs"), "epochs");
  add(app.add_option("--mc-samples", c.mc_samples, "latent samples per point per step (0: automatic)"),
      "mc_samples");
  add(app.add_option("--quad-nodes", c.quad_nodes, "base-space trapezoid nodes"), "quad_nodes");
  add(app.add_option("--seed", c.seed, "random seed"), "seed");
  add(app.add_option("--data", c.data, "training CSV"), "data");
  add(app.add_option("--target", c.target, "target column"), "target");
  add(app.add_option("--features", c.features, "feature columns (default: all others)")->delimiter(','),
      "features");
  add(app.add_flag("--classification", c.classification, "binary labels with a Bernoulli-sigmoid likelihood"),
      "classification");
  add(app.add_flag("--log-target", c.log_target, "model the logarithm of the target"), "log_target");
  add(app.add_option("--batch-size", c.batch_size, "minibatch size (0: full batch)"), "batch_size");
  add(app.add_option("--patience", c.patience, "early-stopping patience in epochs (0: never stop)"), "patience");
  add(app.add_flag("--train-inducing", c.train_inducing, "optimize inducing locations"), "train_inducing");
  add(app.add_option("--split", split, "train,val,test fractions")->delimiter(',')->expected(3), "split");
  return opts;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparse variational elliptical processes"};
  app.require_subcommand(1);

  RunConfig flags;
  std::vector<double> split_flag(flags.split.begin(), flags.split.end());
  std::string config_path;
  std::string train_out = "run";
  CLI::App* train = app.add_subcommand("train", "train a model; writes checkpoint.json and trace.csv");
  const auto run_opts = add_run_options(*train, flags, split_flag);
  train->add_option("--config", config_path, "JSON run configuration; flags override it")
      ->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "output directory");

  PredictArgs pa;
  CLI::App* pred = app.add_subcommand("predict", "predictive summaries and mixing samples as CSV");
  pred->add_option("--checkpoint", pa.checkpoint, "checkpoint JSON")->required();
  pred->add_option("--data", pa.data, "input CSV")->required();
  pred->add_option("--out", pa.out, "predictions CSV")->required();
  pred->add_option("--n-xi", pa.n_xi, "posterior mixing quantiles")->check(CLI::PositiveNumber);
  pred->add_option("--mixing-samples", pa.mixing_samples, "mixing samples written for histograms")
      ->check(CLI::NonNegativeNumber);
  pred->add_option("--seed", pa.seed, "random seed");

  EvalArgs ea;
  CLI::App* ev = app.add_subcommand("eval", "metrics JSON for a checkpoint");
  ev->add_option("--checkpoint", ea.checkpoint, "checkpoint JSON")->required();
  ev->add_option("--data", ea.data, "CSV (default: the training data)");
  ev->add_option("--split", ea.split, "train | val | test | all");
  ev->add_option("--folds", ea.folds, "retrain and evaluate on this many seeded splits")
      ->check(CLI::NonNegativeNumber);
  ev->add_option("--out", ea.out, "metrics JSON");

  FitNoiseArgs fa;
  CLI::App* fn = app.add_subcommand("fit-noise", "fit an elliptical noise model to residuals");
  fn->add_option("--data", fa.data, "residuals CSV")->required();
  fn->add_option("--column", fa.column, "residual column");
  fn->add_option("--out", fa.out, "fitted model JSON");
  fn->add_option("--iterations", fa.iterations, "Adam iterations");
  fn->add_option("--lr", fa.lr, "Adam learning rate");
  fn->add_option("--bins", fa.bins, "spline bins");
  fn->add_option("--quad-nodes", fa.quad_nodes, "base-space trapezoid nodes");

  SimulateArgs sa;
  CLI::App* sim = app.add_subcommand("simulate", "write a synthetic dataset");
  sim->add_option("generator", sa.generator, "gauss | student4 | cauchy | hetero | clusters")->required();
  sim->add_option("--n", sa.n, "number of points");
  sim->add_option("--seed", sa.seed, "random seed");
  sim->add_option("--flip", sa.flip, "label flip fraction (clusters)");
  sim->add_option("--out", sa.out, "output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (train->parsed()) {
      RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
      std::copy(split_flag.begin(), split_flag.end(), flags.split.begin());
      const nlohmann::json given = to_json(flags);
      nlohmann::json overlay = nlohmann::json::object();
      for (const auto& [opt, key] : run_opts) {
        if (opt->count() > 0) overlay[key] = given[key];
      }
      cfg = merge_json(std::move(cfg), overlay);
      cmd_train(cfg, train_out, out);
    } else if (pred->parsed()) {
      cmd_predict(pa, out);
    } else if (ev->parsed()) {
      cmd_eval(ea, out);
    } else if (fn->parsed()) {
      cmd_fit_noise(fa, out);
    } else if (sim->parsed()) {
      cmd_simulate(sa, out);
    }
  } catch (const ConfigError& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitRuntime;
  }
  return 0;
}

}  // namespace elliptic::cli

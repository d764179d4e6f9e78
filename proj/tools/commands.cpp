#include "commands.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <tuple>
#include <variant>

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>

#include "elliptic/checkpoint.hpp"
#include "elliptic/data.hpp"
#include "elliptic/errors.hpp"
#include "elliptic/exact_gp.hpp"
#include "elliptic/likelihoods.hpp"
#include "elliptic/metrics.hpp"
#include "elliptic/mixing.hpp"
#include "elliptic/models.hpp"
#include "elliptic/quadrature.hpp"
#include "elliptic/variational.hpp"

namespace elliptic::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kHeteroNoiseSamples = 100;

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  return out;
}

TargetScaling target_scaling(const RunConfig& cfg) {
  return cfg.classification ? TargetScaling::None : TargetScaling::Standard;
}

CsvOptions csv_options(const RunConfig& cfg, bool require_target = true) {
  CsvOptions o;
  o.log_target = cfg.log_target && !cfg.classification;
  o.features = cfg.features;
  o.require_target = require_target;
  return o;
}

Dataset load_split(const RunConfig& cfg, const std::string& path) {
  if (path.empty()) throw ConfigError("no data file given (--data)");
  return split(load_csv(path, cfg.target, csv_options(cfg)), cfg.split, cfg.seed);
}

struct Fitted {
  Checkpoint checkpoint;
  std::vector<TraceRow> trace;
};

/// Trains on the (already standardized) splits of `d`.
Fitted fit(const RunConfig& cfg, const Dataset& d) {
  BaseQuadrature::set_standard(cfg.quad_nodes);
  const Eigen::MatrixXd xt = take_rows(d.X, d.train);
  const Eigen::VectorXd yt = take(d.y, d.train);
  const Eigen::MatrixXd xv = take_rows(d.X, d.val);
  const Eigen::VectorXd yv = take(d.y, d.val);
  const ModelKind kind = parse_model_kind(cfg.model);
  const Kernel kernel = parse_kernel(cfg.kernel, static_cast<int>(d.dim()));

  RunConfig resolved = cfg;
  resolved.features = d.feature_names;

  Fitted out;
  Checkpoint& ck = out.checkpoint;
  ck.model_kind = to_string(kind);
  ck.stats = d.stats;
  ck.classification = cfg.classification;
  ck.config_json = to_json(resolved).dump();
  if (kind == ModelKind::ExactGP) {
    ExactTrainResult r = train_exact(ExactGP{kernel}, xt, yt, xv, yv, cfg.train_config());
    ck.exact = std::move(r.model);
    ck.train_x = xt;
    ck.train_y = yt;
    out.trace = std::move(r.trace);
  } else {
    Rng rng = split_rng(cfg.seed, 1);
    ModelSpec spec = make_model(kind, kernel, xt, cfg.model_options(), rng);
    TrainResult r = train(std::move(spec), xt, yt, xv, yv, cfg.train_config(), rng);
    ck.variational = std::move(r.model);
    out.trace = std::move(r.trace);
  }
  return out;
}

bool has_both_classes(const Eigen::VectorXd& y) {
  return (y.array() == 1.0).any() && (y.array() == 0.0).any();
}

/// Metrics on standardized data.
json evaluate(const Checkpoint& ck, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  if (x.rows() == 0) throw ConfigError("evaluation split is empty");
  json m;
  m["n"] = x.rows();
  if (ck.exact) {
    const ExactPrediction p = posterior_predict(*ck.exact, ck.train_x, ck.train_y, x);
    m["mse"] = mse(p.mean, y);
    m["nll"] = exact_predictive_nll(*ck.exact, ck.train_x, ck.train_y, x, y);
    return m;
  }
  const ModelSpec& spec = *ck.variational;
  const PredictiveDistribution p = predict(spec, x);
  m["nll"] = predictive_nll(spec, x, y);
  if (ck.classification) {
    m["accuracy"] = accuracy(p.class_prob, y);
    m["auc"] = has_both_classes(y) ? json(auc(p.class_prob, y)) : json(nullptr);
  } else {
    m["mse"] = mse(p.mu_f, y);
  }
  return m;
}

void check_dims(const Checkpoint& ck, Eigen::Index dims) {
  const Eigen::Index expected = ck.exact ? ck.train_x.cols() : ck.variational->input_dim();
  if (dims != expected) {
    throw DimensionError(fmt::format("checkpoint expects {} input columns, data has {}", expected, dims));
  }
}

RunConfig stored_config(const Checkpoint& ck) {
  try {
    return merge_json(RunConfig{}, json::parse(ck.config_json));
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("checkpoint configuration is not valid JSON: ") + e.what());
  }
}

void write_trace(const fs::path& path, const std::vector<TraceRow>& trace) {
  std::ofstream out = open_output(path);
  out << "epoch,elbo,val_nll\n";
  for (const TraceRow& r : trace) fmt::print(out, "{},{:.17g},{:.17g}\n", r.epoch, r.elbo, r.val_nll);
}

void print_metrics(std::ostream& log, const std::string& label, const json& m) {
  log << label << ':';
  for (const auto& [k, v] : m.items()) {
    if (v.is_number_float()) {
      fmt::print(log, " {}={:.6g}", k, v.get<double>());
    } else {
      log << ' ' << k << '=' << v.dump();
    }
  }
  log << '\n';
}

std::vector<std::string> metric_keys(const json& rows) {
  std::vector<std::string> keys;
  for (const auto& [k, v] : rows.front().items()) {
    if (k != "fold" && k != "seed" && k != "n" && v.is_number()) keys.push_back(k);
  }
  return keys;
}

}  // namespace

fs::path mixing_path(const fs::path& predictions) {
  fs::path p = predictions;
  p.replace_filename(predictions.stem().string() + "_mixing.csv");
  return p;
}

void cmd_train(const RunConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  cfg.validate();
  Dataset d = load_split(cfg, cfg.data);
  standardize(d, target_scaling(cfg));
  const Fitted f = fit(cfg, d);

  fs::create_directories(out_dir);
  save_checkpoint(out_dir / "checkpoint.json", f.checkpoint);
  write_trace(out_dir / "trace.csv", f.trace);

  fmt::print(log, "trained {} for {} epochs\n", cfg.model, f.trace.size());
  if (!f.trace.empty()) {
    fmt::print(log, "final elbo={:.6g} val_nll={:.6g}\n", f.trace.back().elbo, f.trace.back().val_nll);
  }
  if (!d.test.empty()) {
    print_metrics(log, "test", evaluate(f.checkpoint, take_rows(d.X, d.test), take(d.y, d.test)));
  }
  fmt::print(log, "wrote {}\n", (out_dir / "checkpoint.json").string());
}

void cmd_predict(const PredictArgs& args, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(args.checkpoint);
  const RunConfig cfg = stored_config(ck);
  BaseQuadrature::set_standard(cfg.quad_nodes);
  const Dataset d = load_csv(args.data, cfg.target, csv_options(cfg, false));
  check_dims(ck, d.dim());
  const Standardizer& st = ck.stats;
  const Eigen::MatrixXd x = st.transform_x(d.X);
  const Eigen::Index n = x.rows();

  Eigen::VectorXd mu(n), sd(n), lo(n), hi(n), prob;
  Rng rng = split_rng(args.seed, 2);
  std::vector<std::tuple<std::string, Eigen::Index, double>> mix;
  const double y_var = st.y_std * st.y_std;

  if (ck.exact) {
    const ExactPrediction p = posterior_predict(*ck.exact, ck.train_x, ck.train_y, x);
    mu = p.mean;
    sd = p.var.cwiseMax(0.0).cwiseSqrt();
    const double z = normal_quantile(0.975);
    lo = mu - z * sd;
    hi = mu + z * sd;
    for (int k = 0; k < args.mixing_samples; ++k) mix.emplace_back("noise", -1, ck.exact->noise_variance() * y_var);
  } else {
    const ModelSpec& spec = *ck.variational;
    const PredictiveDistribution p = predict(spec, x, args.n_xi, args.seed);
    mu = p.mu_f;
    sd = p.var_f.cwiseSqrt();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double h = p.latent_halfwidth(i);
      lo[i] = mu[i] - h;
      hi[i] = mu[i] + h;
    }
    if (p.classification()) prob = p.class_prob;
    for (double v : sample_mix(spec.variational.posterior_mixing, static_cast<std::size_t>(args.mixing_samples), rng)) {
      mix.emplace_back("posterior", -1, v);
    }
    const Likelihood& lik = spec.likelihood;
    const bool hetero = std::holds_alternative<HeteroGaussian>(lik) || std::holds_alternative<HeteroElliptical>(lik);
    if (hetero) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd xi = x.row(i).transpose();
        for (double v : sample_mix(noise_mixing_at(lik, xi), kHeteroNoiseSamples, rng)) {
          mix.emplace_back("noise", i, v * y_var);
        }
      }
    } else if (!is_classification(lik)) {
      const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(x.cols());
      for (double v : sample_mix(noise_mixing_at(lik, x0), static_cast<std::size_t>(args.mixing_samples), rng)) {
        mix.emplace_back("noise", -1, v * y_var);
      }
    }
  }

  const Eigen::VectorXd mu_raw = st.inverse_y(mu);
  const Eigen::VectorXd lo_raw = st.inverse_y(lo);
  const Eigen::VectorXd hi_raw = st.inverse_y(hi);
  const fs::path out_path = args.out;
  {
    std::ofstream out = open_output(out_path);
    for (const auto& name : d.feature_names) out << name << ',';
    out << "mu_f,sigma_f,lower95,upper95" << (prob.size() > 0 ? ",prob" : "") << '\n';
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index c = 0; c < d.X.cols(); ++c) fmt::print(out, "{:.17g},", d.X(i, c));
      fmt::print(out, "{:.17g},{:.17g},{:.17g},{:.17g}", mu_raw[i], sd[i] * st.y_std, lo_raw[i], hi_raw[i]);
      if (prob.size() > 0) fmt::print(out, ",{:.17g}", prob[i]);
      out << '\n';
    }
  }
  const fs::path mpath = mixing_path(out_path);
  {
    std::ofstream out = open_output(mpath);
    out << "source,row,value\n";
    for (const auto& [source, row, value] : mix) fmt::print(out, "{},{},{:.17g}\n", source, row, value);
  }
  fmt::print(log, "wrote {} rows to {} and mixing samples to {}\n", n, out_path.string(), mpath.string());
}

void cmd_eval(const EvalArgs& args, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(args.checkpoint);
  const RunConfig cfg = stored_config(ck);
  const std::string data_path = args.data.empty() ? cfg.data : args.data;
  if (args.folds < 0) throw ConfigError("--folds must be nonnegative");
  BaseQuadrature::set_standard(cfg.quad_nodes);

  json result;
  if (args.folds > 0) {
    json rows = json::array();
    for (int f = 0; f < args.folds; ++f) {
      RunConfig fc = cfg;
      fc.seed = cfg.seed + static_cast<std::uint64_t>(f);
      Dataset d = load_split(fc, data_path);
      standardize(d, target_scaling(fc));
      const Fitted fitted = fit(fc, d);
      json m = evaluate(fitted.checkpoint, take_rows(d.X, d.test), take(d.y, d.test));
      m["fold"] = f;
      m["seed"] = fc.seed;
      print_metrics(log, fmt::format("fold {}", f), m);
      rows.push_back(std::move(m));
    }
    json mean, sd;
    for (const std::string& k : metric_keys(rows)) {
      double s = 0.0;
      int count = 0;
      for (const json& r : rows) {
        if (r[k].is_number()) {
          s += r[k].get<double>();
          ++count;
        }
      }
      const double mval = count > 0 ? s / count : std::numeric_limits<double>::quiet_NaN();
      double ss = 0.0;
      for (const json& r : rows) {
        if (r[k].is_number()) ss += (r[k].get<double>() - mval) * (r[k].get<double>() - mval);
      }
      mean[k] = mval;
      sd[k] = count > 1 ? std::sqrt(ss / (count - 1)) : 0.0;
    }
    print_metrics(log, "mean", mean);
    print_metrics(log, "std", sd);
    result = {{"folds", rows}, {"mean", mean}, {"std", sd}};
  } else {
    Dataset d = load_split(cfg, data_path);
    check_dims(ck, d.dim());
    const Eigen::MatrixXd x = ck.stats.transform_x(d.X);
    const Eigen::VectorXd y = ck.stats.transform_y(d.y);
    std::vector<Eigen::Index> idx;
    if (args.split == "train") {
      idx = d.train;
    } else if (args.split == "val") {
      idx = d.val;
    } else if (args.split == "test") {
      idx = d.test;
    } else if (args.split == "all") {
      idx.resize(static_cast<std::size_t>(d.size()));
      for (Eigen::Index i = 0; i < d.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
    } else {
      throw ConfigError("unknown split '" + args.split + "' (use train, val, test or all)");
    }
    result = evaluate(ck, take_rows(x, idx), take(y, idx));
    result["split"] = args.split;
    print_metrics(log, args.split, result);
  }
  if (!args.out.empty()) {
    std::ofstream out = open_output(args.out);
    out << result.dump(2) << '\n';
  }
}

void cmd_fit_noise(const FitNoiseArgs& args, std::ostream& log) {
  if (args.bins < 1) throw ConfigError("--bins must be positive");
  if (args.iterations < 1) throw ConfigError("--iterations must be positive");
  if (!(args.lr > 0.0)) throw ConfigError("--lr must be positive");
  if (args.quad_nodes < 2) throw ConfigError("--quad-nodes must be at least 2");
  CsvOptions co;
  co.require_features = false;
  const Dataset d = load_csv(args.data, args.column, co);
  const std::vector<double> r(d.y.data(), d.y.data() + d.y.size());

  const BaseQuadrature quad(args.quad_nodes);
  FitNoiseConfig fc;
  fc.bins = args.bins;
  fc.iterations = args.iterations;
  fc.lr = args.lr;
  fc.quad = &quad;
  const FitNoiseResult fitted = fit_noise(r, fc);
  const auto [gauss_var, gauss_ll] = gaussian_noise_fit(r);

  const double nll = -fitted.mean_log_lik;
  const double gauss_nll = -gauss_ll;
  fmt::print(log, "elliptical noise nll={:.6f}\ngaussian noise nll={:.6f} (variance {:.6g})\n", nll, gauss_nll,
             gauss_var);
  if (!args.out.empty()) {
    const json j = {{"n", r.size()},
                    {"nll", nll},
                    {"gaussian_nll", gauss_nll},
                    {"gaussian_variance", gauss_var},
                    {"iterations", fitted.trace.size()},
                    {"mixing", json::parse(serialize_mixing(fitted.model.mixing))}};
    std::ofstream out = open_output(args.out);
    out << j.dump(2) << '\n';
  }
}

void cmd_simulate(const SimulateArgs& args, std::ostream& log) {
  if (args.n < 1) throw ConfigError("--n must be positive");
  if (args.out.empty()) throw ConfigError("--out is required");
  Dataset d;
  if (args.generator == "hetero") {
    d = gen_heteroscedastic(args.n, args.seed);
  } else if (args.generator == "clusters") {
    if (!(args.flip >= 0.0 && args.flip <= 1.0)) throw ConfigError("--flip must lie in [0, 1]");
    d = gen_two_clusters(args.n, args.flip, args.seed);
  } else if (args.generator == "gauss" || args.generator == "student4" || args.generator == "cauchy") {
    d = gen_noise_identification(parse_noise_variant(args.generator), args.n, args.seed);
  } else {
    throw ConfigError("unknown generator '" + args.generator +
                      "' (use gauss, student4, cauchy, hetero or clusters)");
  }
  const fs::path out = args.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_csv(out.string(), d);
  fmt::print(log, "wrote {} rows to {}\n", d.size(), out.string());
}

}  // namespace elliptic::cli

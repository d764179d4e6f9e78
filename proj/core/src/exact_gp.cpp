#include "elliptic/exact_gp.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "elliptic/adam.hpp"
#include "elliptic/errors.hpp"
#include "elliptic/scalar_math.hpp"

namespace elliptic {

namespace {

GramMatrix noisy_gram(const ExactGP& model, const Eigen::MatrixXd& x) {
  if (!x.allFinite()) throw DomainError("exact GP: non-finite inputs");
  Eigen::MatrixXd k = model.kernel.gram(x, x);
  k.diagonal().array() += model.noise_variance();
  return factorize_with_jitter(std::move(k));
}

void check(const ExactGP& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  model.kernel.validate();
  if (!std::isfinite(model.log_noise)) throw DomainError("exact GP: non-finite noise variance");
  if (x.rows() != y.size()) throw DimensionError("exact GP: X and y lengths differ");
  if (x.rows() == 0) throw DimensionError("exact GP: no training data");
}

}  // namespace

Eigen::VectorXd ExactGP::params() const {
  const Eigen::VectorXd k = kernel.params();
  Eigen::VectorXd out(k.size() + 1);
  out << k, log_noise;
  return out;
}

void ExactGP::set_params(const Eigen::VectorXd& theta) {
  if (theta.size() != kernel.num_params() + 1) throw DimensionError("exact GP: parameter length mismatch");
  kernel.set_params(theta.head(theta.size() - 1));
  log_noise = theta[theta.size() - 1];
}

LogMarginal log_marginal(const ExactGP& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  check(model, x, y);
  const GramMatrix g = noisy_gram(model, x);
  const Eigen::VectorXd alpha = g.solve(y);
  const auto n = static_cast<double>(y.size());
  LogMarginal out;
  out.value = -0.5 * y.dot(alpha) - 0.5 * g.logdet() - 0.5 * n * kLog2Pi;
  Eigen::MatrixXd w = 0.5 * (alpha * alpha.transpose() - g.inverse());
  out.grad.resize(model.kernel.num_params() + 1);
  out.grad.head(model.kernel.num_params()) = model.kernel.grad_params(x, x, w);
  out.grad[model.kernel.num_params()] = model.noise_variance() * w.trace();
  return out;
}

ExactPrediction posterior_predict(const ExactGP& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                  const Eigen::MatrixXd& x_star) {
  check(model, x, y);
  const GramMatrix g = noisy_gram(model, x);
  const Eigen::MatrixXd ks = model.kernel.gram(x, x_star);
  ExactPrediction out;
  out.mean = ks.transpose() * g.solve(y);
  const Eigen::MatrixXd v = g.solve_lower(ks);
  out.var = (model.kernel.diag(x_star) - v.cwiseAbs2().colwise().sum().transpose()).cwiseMax(0.0);
  return out;
}

double exact_predictive_nll(const ExactGP& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                            const Eigen::MatrixXd& x_test, const Eigen::VectorXd& y_test) {
  if (x_test.rows() != y_test.size() || x_test.rows() == 0) {
    throw DimensionError("exact GP: test X and y lengths differ or are empty");
  }
  const ExactPrediction p = posterior_predict(model, x, y, x_test);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < y_test.size(); ++i) {
    const double v = p.var[i] + model.noise_variance();
    const double r = y_test[i] - p.mean[i];
    acc += 0.5 * (kLog2Pi + std::log(v) + r * r / v);
  }
  return acc / static_cast<double>(y_test.size());
}

ExactTrainResult train_exact(ExactGP model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                             const Eigen::MatrixXd& x_val, const Eigen::VectorXd& y_val,
                             const TrainConfig& config) {
  check(model, x, y);
  if (config.early_stopping && x_val.rows() == 0) {
    throw ConfigError("exact GP: early stopping needs a nonempty validation split");
  }
  if (config.epochs < 1) throw ConfigError("exact GP: epoch count must be positive");
  Adam adam(AdamConfig{.lr = config.lr});
  ExactTrainResult result;
  result.model = model;
  result.best_val_nll = std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const LogMarginal lm = log_marginal(model, x, y);
    if (!std::isfinite(lm.value)) {
      throw NumericalError("exact GP: log marginal likelihood is not finite at epoch " + std::to_string(epoch));
    }
    Eigen::VectorXd theta = model.params();
    adam.step(theta, -lm.grad);
    model.set_params(theta);
    TraceRow row{epoch, lm.value, std::numeric_limits<double>::quiet_NaN()};
    if (x_val.rows() > 0) row.val_nll = exact_predictive_nll(model, x, y, x_val, y_val);
    result.trace.push_back(row);
    if (config.early_stopping) {
      if (row.val_nll < result.best_val_nll) {
        result.best_val_nll = row.val_nll;
        result.best_epoch = epoch;
        result.model = model;
      } else if (config.patience > 0 && epoch - result.best_epoch >= config.patience) {
        break;
      }
    }
  }
  if (!config.early_stopping || result.best_epoch < 0) {
    result.model = model;
    result.best_epoch = result.trace.back().epoch;
    result.best_val_nll = result.trace.back().val_nll;
  }
  return result;
}

}  // namespace elliptic

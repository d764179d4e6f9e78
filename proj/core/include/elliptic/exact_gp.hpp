#pragma once

// Exact Gaussian-process regression by dense Cholesky factorization.

#include <vector>

#include <Eigen/Dense>

#include "elliptic/kernels.hpp"
#include "elliptic/training.hpp"

namespace elliptic {

struct ExactGP {
  Kernel kernel;
  double log_noise = std::log(0.1);  // log sigma^2

  [[nodiscard]] double noise_variance() const { return std::exp(log_noise); }
  /// Kernel parameters followed by log_noise.
  [[nodiscard]] Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd& theta);
};

struct LogMarginal {
  double value = 0.0;
  Eigen::VectorXd grad;  // ordered as ExactGP::params()
};

/// log N(y; 0, K + sigma^2 I) and its gradient.
LogMarginal log_marginal(const ExactGP& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

struct ExactPrediction {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;  // latent variance; add noise_variance() for y
};

ExactPrediction posterior_predict(const ExactGP& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                  const Eigen::MatrixXd& x_star);

/// Mean negative log predictive density of y_test.
double exact_predictive_nll(const ExactGP& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                            const Eigen::MatrixXd& x_test, const Eigen::VectorXd& y_test);

struct ExactTrainResult {
  ExactGP model;
  std::vector<TraceRow> trace;
  int best_epoch = -1;
  double best_val_nll = 0.0;
};

/// Adam ascent on the log marginal likelihood with early stopping on the
/// validation NLL (the batch size and sampling fields of `config` are unused).
ExactTrainResult train_exact(ExactGP model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                             const Eigen::MatrixXd& x_val, const Eigen::VectorXd& y_val, const TrainConfig& config);

}  // namespace elliptic

#pragma once

// Sparse variational elliptical processes.
//
// q(u, xi) = N(u; m, S xi) q(xi) over inducing values u = f(Z); the latent
// marginal at x is N(mu_f(x), sigma_f(x) xi). The ELBO is
//   (N / |B|) sum_i E_q[log p(y_i | f_i)] - KL(q(u, xi) || p(u, xi)),
// with the KL split into a Gaussian part that is analytic given xi and a
// mixing part estimated by Monte Carlo.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "elliptic/adam.hpp"
#include "elliptic/kernels.hpp"
#include "elliptic/likelihoods.hpp"
#include "elliptic/mixing.hpp"
#include "elliptic/random.hpp"
#include "elliptic/training.hpp"

namespace elliptic {

struct VariationalState {
  Eigen::MatrixXd Z;
  Eigen::VectorXd m;
  Eigen::MatrixXd S_chol;  // lower triangular, positive diagonal
  MixingDistribution posterior_mixing = Dirac{1.0};
};

struct ModelSpec {
  Kernel kernel;
  MixingDistribution prior_mixing = Dirac{1.0};
  Likelihood likelihood = GaussianLik{};
  VariationalState variational;
  bool train_inducing = false;
  bool train_prior_mixing = true;
  bool trained = false;
  JitterSchedule jitter;

  /// Throws on inconsistent shapes or an unsupported prior/posterior mixing pair.
  void validate(int input_dim = -1) const;
  [[nodiscard]] int input_dim() const { return static_cast<int>(variational.Z.cols()); }
};

/// Latent marginals at the rows of x_star; `var` is sigma_f, the variance
/// before scaling by xi.
struct LatentMarginals {
  Eigen::VectorXd mu;
  Eigen::VectorXd var;
};

LatentMarginals q_f_marginal(const ModelSpec& spec, const Eigen::MatrixXd& x_star);
std::pair<double, double> q_f_marginal(const ModelSpec& spec, const Eigen::VectorXd& x_star);

struct KlValue {
  double gaussian = 0.0;
  double mixing = 0.0;
  double mixing_se = 0.0;  // Monte-Carlo standard error of `mixing`
  [[nodiscard]] double total() const { return gaussian + mixing; }
};

KlValue kl_term(const ModelSpec& spec, Rng& rng, int mixing_samples = 256);

/// Base draws used by one ELBO evaluation. Holding them fixed makes the
/// estimate a deterministic, differentiable function of the parameters.
struct ElboNoise {
  std::vector<double> xi_base;   // n_mc standard normals pushed through q(xi)
  Eigen::MatrixXd eps;           // |B| x n_mc latent noise
  std::vector<double> kl_base;   // draws for the mixing KL
};

ElboNoise draw_elbo_noise(Eigen::Index batch, int n_mc, Rng& rng, int kl_samples = 256);

struct ElboValue {
  double value = 0.0;
  double expected_loglik = 0.0;  // already scaled by N / |B|
  double kl_gaussian = 0.0;
  double kl_mixing = 0.0;
};

/// Trainable parameter blocks in a fixed order: kernel, likelihood,
/// prior_mixing, posterior_mixing, m, S_chol, Z (absent blocks skipped).
std::vector<ParamBlock> parameter_blocks(const ModelSpec& spec);
void apply_parameter_blocks(ModelSpec& spec, std::span<const ParamBlock> blocks);

struct ElboGradient {
  ElboValue value;
  std::vector<ParamBlock> blocks;  // grad holds d ELBO / d value
};

ElboGradient elbo_gradient(const ModelSpec& spec, const Eigen::MatrixXd& xb, const Eigen::VectorXd& yb,
                           double full_n, const ElboNoise& noise);
ElboValue elbo(const ModelSpec& spec, const Eigen::MatrixXd& xb, const Eigen::VectorXd& yb, double full_n,
               const ElboNoise& noise);
ElboValue elbo(const ModelSpec& spec, const Eigen::MatrixXd& xb, const Eigen::VectorXd& yb, double full_n,
               int n_mc, Rng& rng);

struct TrainResult {
  ModelSpec model;
  std::vector<TraceRow> trace;
  int best_epoch = -1;
  double best_val_nll = 0.0;
};

/// Adam ascent on the ELBO. With early stopping the returned model is the
/// snapshot with the lowest validation NLL.
TrainResult train(ModelSpec spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                  const Eigen::MatrixXd& x_val, const Eigen::VectorXd& y_val, const TrainConfig& config,
                  Rng& rng);

struct PredictiveDistribution {
  Eigen::VectorXd mu_f;
  Eigen::VectorXd var_f;
  std::vector<double> xi;           // posterior mixing quantiles
  std::vector<NoiseNodes> noise;    // per point; empty for classification
  Eigen::VectorXd class_prob;       // classification only

  [[nodiscard]] Eigen::Index size() const { return mu_f.size(); }
  [[nodiscard]] bool classification() const { return class_prob.size() > 0; }
  /// E[xi] * sigma_f.
  [[nodiscard]] double latent_variance(Eigen::Index i) const;
  /// Half-width z of the central latent credible interval mu_f +- z.
  [[nodiscard]] double latent_halfwidth(Eigen::Index i, double target = 0.95) const;
  /// log p(y | x_i) including the noise model.
  [[nodiscard]] double log_density(Eigen::Index i, double y) const;
};

inline constexpr int kClassPredictionSamples = 64;

PredictiveDistribution predict(const ModelSpec& spec, const Eigen::MatrixXd& x_star, int n_xi = 64,
                               std::uint64_t seed = 0);

double predictive_nll(const ModelSpec& spec, const Eigen::MatrixXd& x_test, const Eigen::VectorXd& y_test,
                      int n_xi = 64, std::uint64_t seed = 0);

}  // namespace elliptic

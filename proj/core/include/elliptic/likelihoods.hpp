#pragma once

// Observation models p(y | f).
//
// Scale-mixture noise models integrate N(y; f, omega) against the noise
// mixing distribution with the base-space trapezoid rule; the resulting
// per-point log-likelihood is a log-sum-exp over quadrature nodes.

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "elliptic/mixing.hpp"
#include "elliptic/mlp.hpp"
#include "elliptic/quadrature.hpp"

namespace elliptic {

struct GaussianLik {
  double log_variance = std::log(0.1);
};

struct EllipticalNoise {
  MixingDistribution mixing = FlowMixing{SplineFlowParams::identity(9, Squash::softplus())};
};

/// Noise variance softplus(net(x)) + kHeteroVarianceFloor.
struct HeteroGaussian {
  MLPParams net;
};

/// Per-input noise mixing flow whose raw parameters are net(x).
struct HeteroElliptical {
  MLPParams net;
  int bins = 9;
  double tail_bound = kDefaultTailBound;
};

/// Labels in {0, 1}, p(y = 1 | f) = sigmoid(f).
struct BernoulliSigmoid {};

using Likelihood = std::variant<GaussianLik, EllipticalNoise, HeteroGaussian, HeteroElliptical, BernoulliSigmoid>;

inline constexpr double kHeteroVarianceFloor = 1e-6;

void validate(const Likelihood& lik, int input_dim);
[[nodiscard]] bool is_classification(const Likelihood& lik);
[[nodiscard]] const char* likelihood_name(const Likelihood& lik);

/// log p(y | f, x).
double marginal_log_lik_point(const Likelihood& lik, double y, double f, const Eigen::VectorXd& x,
                              const BaseQuadrature& quad = BaseQuadrature::standard());

SplineFlowParams hetero_flow_params(const HeteroElliptical& lik, const Eigen::VectorXd& x);
double hetero_variance(const HeteroGaussian& lik, const Eigen::VectorXd& x);

/// The noise mixing at x (Dirac for Gaussian models). Throws for BernoulliSigmoid.
MixingDistribution noise_mixing_at(const Likelihood& lik, const Eigen::VectorXd& x);

/// Trainable parameters, flattened; empty for BernoulliSigmoid and fixed mixings.
Eigen::VectorXd likelihood_params(const Likelihood& lik);
void set_likelihood_params(Likelihood& lik, const Eigen::VectorXd& theta);

/// Quadrature nodes of a noise mixing: log weights and variances.
struct NoiseNodes {
  std::vector<double> log_weight;
  std::vector<double> omega;
};

NoiseNodes noise_nodes(const MixingDistribution& mixing, const BaseQuadrature& quad = BaseQuadrature::standard());

/// log sum_k exp(log_weight_k) N(r; 0, omega_k + extra_var). When `omega_adj`
/// is non-empty, adds `weight * d/d omega_k` to it; `d_dr` receives d/dr.
double noise_log_lik(const NoiseNodes& nodes, double r, double extra_var = 0.0, double weight = 0.0,
                     std::span<double> omega_adj = {}, double* d_dr = nullptr);

struct FitNoiseConfig {
  int bins = 9;
  int iterations = 3000;
  double lr = 0.02;
  double tol = 1e-7;  // stop when the mean objective improves less than this over 200 steps
  const BaseQuadrature* quad = nullptr;
};

struct FitNoiseResult {
  EllipticalNoise model;
  double mean_log_lik = 0.0;       // per residual, at the returned parameters
  std::vector<double> trace;       // mean log-likelihood per iteration
};

/// Maximizes sum_i log p(r_i) over the flow parameters of an EllipticalNoise
/// model with a Softplus squash. Throws NumericalError carrying the trace
/// when the objective becomes non-finite.
FitNoiseResult fit_noise(std::span<const double> residuals, const FitNoiseConfig& config = {});

/// Gaussian maximum-likelihood variance of zero-centered residuals and the
/// mean log-likelihood it attains.
std::pair<double, double> gaussian_noise_fit(std::span<const double> residuals);

}  // namespace elliptic

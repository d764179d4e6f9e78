#pragma once

// Consistent elliptical distributions represented as Gaussian scale mixtures:
// joint density, hierarchical sampling, conditioning and credible intervals.

#include <span>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "elliptic/kernels.hpp"
#include "elliptic/mixing.hpp"
#include "elliptic/quadrature.hpp"
#include "elliptic/random.hpp"

namespace elliptic {

struct EllipticalDistribution {
  Eigen::VectorXd mu;
  Eigen::MatrixXd scale_chol;  // lower triangular, positive diagonal
  MixingDistribution mixing = Dirac{};

  /// Factorizes `scale` (no jitter); throws DegenerateKernelError if singular.
  static EllipticalDistribution from_scale(Eigen::VectorXd mu, const Eigen::MatrixXd& scale,
                                           MixingDistribution mixing);

  [[nodiscard]] Eigen::Index dim() const { return mu.size(); }
  [[nodiscard]] Eigen::MatrixXd scale() const { return scale_chol * scale_chol.transpose(); }
  void validate() const;
};

/// (y - mu)^T Sigma^{-1} (y - mu) by a triangular solve.
double mahalanobis(const EllipticalDistribution& dist, const Eigen::VectorXd& y);

/// log int N(y; mu, xi Sigma) p(xi) dxi.
double joint_log_density(const EllipticalDistribution& dist, const Eigen::VectorXd& y,
                         const BaseQuadrature& quad = BaseQuadrature::standard());

/// One path f = chol(K) z sqrt(xi) with xi drawn from `mixing`.
Eigen::VectorXd sample_path(const Kernel& kernel, const Eigen::MatrixXd& x,
                            const MixingDistribution& mixing, Rng& rng);

/// A density tabulated on a log-spaced grid, normalized by the trapezoid rule
/// in log coordinates. Sampling inverts the tabulated CDF.
class TabulatedMixing {
 public:
  TabulatedMixing(std::vector<double> grid, std::vector<double> log_unnormalized);

  [[nodiscard]] std::span<const double> grid() const { return grid_; }
  /// Normalized density at the grid points.
  [[nodiscard]] std::span<const double> density_values() const { return density_; }
  /// Density by log-linear interpolation between grid points; 0 outside.
  [[nodiscard]] double density(double w) const;
  [[nodiscard]] double mean() const { return mean_; }
  [[nodiscard]] std::vector<double> sample(std::size_t n, Rng& rng) const;
  /// E[h(w)] by the same trapezoid rule used for normalization.
  template <class F>
  double expect(F&& h) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < grid_.size(); ++k) acc += mass_[k] * h(grid_[k]);
    return acc;
  }

 private:
  std::vector<double> grid_;
  std::vector<double> density_;
  std::vector<double> mass_;  // trapezoid weight * density * w, sums to 1
  std::vector<double> cdf_;
  double mean_ = 0.0;
};

using ConditionalMixing = std::variant<Dirac, TabulatedMixing>;

struct ConditionalDistribution {
  Eigen::VectorXd mu;
  Eigen::MatrixXd scale_chol;
  ConditionalMixing mixing;

  [[nodiscard]] double mixing_mean() const;
  /// mixing_mean() * Sigma_{2|1}.
  [[nodiscard]] Eigen::MatrixXd covariance() const;
  /// log p(y2 | y1).
  [[nodiscard]] double log_density(const Eigen::VectorXd& y2) const;
};

inline constexpr int kConditionalGridSize = 512;

/// Conditions on y1 at the coordinates `observed`. The conditional mixing
/// density, proportional to xi^{-N1/2} exp(-u1 / (2 xi)) p(xi), is tabulated on
/// a log grid spanning [1e-4, 1e4] times the prior median.
ConditionalDistribution condition(const EllipticalDistribution& dist,
                                  const std::vector<Eigen::Index>& observed,
                                  const Eigen::VectorXd& y1);

/// (1/m) sum_i erf(z / sqrt(2 xi_i)).
double credible_coverage(std::span<const double> xi, double z);

/// Smallest z with credible_coverage(xi, z) = target, by bisection.
double credible_halfwidth(std::span<const double> xi, double target);

}  // namespace elliptic

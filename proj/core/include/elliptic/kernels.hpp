#pragma once

// Covariance kernels (scale-matrix functions) with gradients.
//
// Positive hyperparameters live in log space. Every kernel exposes
// contractions of its parameter and input derivatives against an adjoint
// matrix G, i.e. sum_ab G_ab dk(x1_a, x2_b)/dtheta, which is what the
// variational engine and exact GP need for backpropagation.

#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace elliptic {

struct SEArd {
  Eigen::VectorXd log_lengthscales;
  double log_variance = 0.0;
};

struct PeriodicKernel {
  double log_lengthscale = 0.0;
  double log_period = 0.0;
  double log_variance = 0.0;
};

/// k(x, x') = variance * (x - offset)^T (x' - offset), offset broadcast.
struct LinearKernel {
  double log_variance = 0.0;
  double offset = 0.0;
};

struct Kernel;

struct SumKernel {
  std::vector<Kernel> children;
};

struct Kernel {
  std::variant<SEArd, PeriodicKernel, LinearKernel, SumKernel> spec;

  static Kernel se_ard(int dims, double lengthscale = 1.0, double variance = 1.0);
  static Kernel periodic(double lengthscale, double period, double variance);
  static Kernel linear(double variance, double offset = 0.0);
  static Kernel sum(std::vector<Kernel> children);

  [[nodiscard]] int num_params() const;
  [[nodiscard]] Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd& theta);

  /// Required input dimension, or -1 when any dimension is accepted.
  [[nodiscard]] int input_dim() const;

  /// Throws on non-finite parameters or an empty sum.
  void validate() const;

  [[nodiscard]] Eigen::MatrixXd gram(const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2) const;
  [[nodiscard]] Eigen::VectorXd diag(const Eigen::MatrixXd& x) const;

  /// sum_ab G_ab dk(x1_a, x2_b)/dtheta.
  [[nodiscard]] Eigen::VectorXd grad_params(const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2,
                                            const Eigen::MatrixXd& g) const;
  /// sum_a g_a dk(x_a, x_a)/dtheta.
  [[nodiscard]] Eigen::VectorXd grad_params_diag(const Eigen::MatrixXd& x,
                                                 const Eigen::VectorXd& g) const;
  /// Row a holds sum_b G_ab dk(x1_a, x2_b)/dx1_a.
  [[nodiscard]] Eigen::MatrixXd grad_x1(const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2,
                                        const Eigen::MatrixXd& g) const;
};

/// Gram matrix between the rows of x1 and x2.
Eigen::MatrixXd gram(const Kernel& kernel, const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2);

/// Escalating diagonal jitter, in units of the mean diagonal entry.
///
/// When `try_zero` is set the bare matrix is attempted first and accepted only
/// if its smallest Cholesky pivot squared is at least half the initial jitter
/// level, so numerically singular matrices always escalate.
struct JitterSchedule {
  bool try_zero = true;
  double initial = 1e-8;
  double max = 1e-2;
  double factor = 10.0;
};

/// A factorized symmetric positive-definite matrix K + jitter * I.
class GramMatrix {
 public:
  GramMatrix() = default;
  GramMatrix(Eigen::MatrixXd k, double jitter, Eigen::MatrixXd chol)
      : k_(std::move(k)), jitter_(jitter), chol_(std::move(chol)) {}

  /// The matrix before jitter.
  [[nodiscard]] const Eigen::MatrixXd& matrix() const { return k_; }
  [[nodiscard]] double jitter() const { return jitter_; }
  /// Lower Cholesky factor of K + jitter * I.
  [[nodiscard]] const Eigen::MatrixXd& chol() const { return chol_; }
  [[nodiscard]] Eigen::Index size() const { return k_.rows(); }

  [[nodiscard]] Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;
  [[nodiscard]] Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  /// L^{-1} b.
  [[nodiscard]] Eigen::MatrixXd solve_lower(const Eigen::MatrixXd& b) const;
  [[nodiscard]] Eigen::MatrixXd inverse() const;
  [[nodiscard]] double logdet() const;

 private:
  Eigen::MatrixXd k_;
  double jitter_ = 0.0;
  Eigen::MatrixXd chol_;
};

/// Factorizes `k` along the jitter schedule; throws DegenerateKernelError.
GramMatrix factorize_with_jitter(Eigen::MatrixXd k, const JitterSchedule& schedule = {});

/// gram(kernel, x, x) factorized along the jitter schedule.
GramMatrix gram_with_jitter(const Kernel& kernel, const Eigen::MatrixXd& x,
                            const JitterSchedule& schedule = {});

}  // namespace elliptic

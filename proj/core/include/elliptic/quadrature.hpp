#pragma once

// Trapezoidal quadrature over the standard-normal base variable of a flow.
//
// Expectations over a mixing variable w = T(zeta), zeta ~ N(0, 1), are taken
// in base space: E[h(w)] = sum_k c_k h(T(zeta_k)), where zeta_k is an
// equispaced grid on [-bound, bound] and c_k are the trapezoid weights times
// the standard-normal density. The weights are rescaled to sum to one.

#include <span>
#include <vector>

namespace elliptic {

inline constexpr int kDefaultQuadratureNodes = 128;
inline constexpr double kDefaultQuadratureBound = 6.0;

class BaseQuadrature {
 public:
  explicit BaseQuadrature(int nodes = kDefaultQuadratureNodes,
                          double bound = kDefaultQuadratureBound);

  [[nodiscard]] std::span<const double> nodes() const { return nodes_; }
  [[nodiscard]] std::span<const double> weights() const { return weights_; }
  [[nodiscard]] std::span<const double> log_weights() const { return log_weights_; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] double bound() const { return bound_; }

  /// Shared instance used wherever no quadrature is passed explicitly.
  static const BaseQuadrature& standard();
  /// Replaces the shared instance. Not synchronized: call before any
  /// concurrent model evaluation.
  static void set_standard(int nodes, double bound = kDefaultQuadratureBound);

 private:
  double bound_;
  std::vector<double> nodes_;
  std::vector<double> weights_;
  std::vector<double> log_weights_;
};

/// Standard-normal quantiles at the midpoints (j - 1/2) / n, j = 1..n.
std::vector<double> normal_quantile_grid(int n);

double normal_quantile(double p);

}  // namespace elliptic

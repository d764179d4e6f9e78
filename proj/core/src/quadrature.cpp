#include "elliptic/quadrature.hpp"

#include <cmath>
#include <numbers>

#include <boost/math/special_functions/erf.hpp>

#include "elliptic/errors.hpp"
#include "elliptic/scalar_math.hpp"

namespace elliptic {

BaseQuadrature::BaseQuadrature(int nodes, double bound) : bound_(bound) {
  if (nodes < 2) throw ConfigError("quadrature: at least two nodes are required");
  if (!(bound > 0.0)) throw ConfigError("quadrature: bound must be positive");
  const auto n = static_cast<std::size_t>(nodes);
  const double step = 2.0 * bound / static_cast<double>(n - 1);
  nodes_.resize(n);
  weights_.resize(n);
  log_weights_.resize(n);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    nodes_[k] = -bound + step * static_cast<double>(k);
    const double trap = (k == 0 || k + 1 == n) ? 0.5 * step : step;
    weights_[k] = trap * std::exp(log_normal_pdf(nodes_[k]));
    total += weights_[k];
  }
  for (std::size_t k = 0; k < n; ++k) {
    weights_[k] /= total;
    log_weights_[k] = std::log(weights_[k]);
  }
}

namespace {

BaseQuadrature& shared_quadrature() {
  static BaseQuadrature q;
  return q;
}

}  // namespace

const BaseQuadrature& BaseQuadrature::standard() { return shared_quadrature(); }

void BaseQuadrature::set_standard(int nodes, double bound) { shared_quadrature() = BaseQuadrature(nodes, bound); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal quantile: probability must lie in (0, 1)");
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

std::vector<double> normal_quantile_grid(int n) {
  if (n < 1) throw ConfigError("quantile grid: size must be positive");
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] = normal_quantile((j + 0.5) / n);
  return out;
}

}  // namespace elliptic

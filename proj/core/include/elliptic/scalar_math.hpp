#pragma once

// Numerically stable scalar helpers with matching overloads for ad::Var.

#include <cmath>
#include <numbers>
#include <span>

#include "elliptic/autodiff.hpp"

namespace elliptic {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // log(2*pi)

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double log_sigmoid(double x) { return -softplus(-x); }

/// Inverse of softplus; x must be positive.
inline double softplus_inverse(double x) {
  if (x > 30.0) return x + std::log(-std::expm1(-x));
  return std::log(std::expm1(x));
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline double log_normal_pdf(double x) { return -0.5 * (kLog2Pi + x * x); }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

namespace ad {

inline Var sigmoid(const Var& x) {
  const double s = elliptic::sigmoid(x.v);
  return unary(x, s, s * (1.0 - s));
}
inline Var softplus(const Var& x) {
  return unary(x, elliptic::softplus(x.v), elliptic::sigmoid(x.v));
}
inline Var log_sigmoid(const Var& x) {
  return unary(x, elliptic::log_sigmoid(x.v), elliptic::sigmoid(-x.v));
}
inline Var softplus_inverse(const Var& x) {
  // d/dx log(expm1(x)) = 1 / (1 - exp(-x))
  return unary(x, elliptic::softplus_inverse(x.v), -1.0 / std::expm1(-x.v));
}
inline Var logit(const Var& x) {
  return unary(x, elliptic::logit(x.v), 1.0 / (x.v * (1.0 - x.v)));
}

}  // namespace ad

/// log(sum_i exp(a_i)) for plain doubles.
inline double logsumexp(std::span<const double> a) {
  double m = -INFINITY;
  for (double v : a) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : a) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace elliptic

#pragma once

// One-dimensional monotonic rational-quadratic spline bijections.
//
// The spline acts on [-B, B] with K bins and is the identity outside, with
// unit boundary derivatives so the map is C1 everywhere. An optional output
// squash (Softplus or a scaled sigmoid) maps the result to a positive
// interval, which is how mixing distributions are built from a standard
// normal base variable.
//
// Parameters are stored unconstrained as [widths(K), heights(K),
// derivatives(K-1)], i.e. 3K-1 numbers. All zeros is exactly the identity.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "elliptic/autodiff.hpp"
#include "elliptic/random.hpp"
#include "elliptic/scalar_math.hpp"

namespace elliptic {

enum class SquashKind { None, Softplus, ScaledSigmoid };

struct Squash {
  SquashKind kind = SquashKind::None;
  double max = 1.0;  // upper end of the image for ScaledSigmoid

  static Squash none() { return {SquashKind::None, 1.0}; }
  static Squash softplus() { return {SquashKind::Softplus, 1.0}; }
  static Squash scaled_sigmoid(double max) { return {SquashKind::ScaledSigmoid, max}; }

  [[nodiscard]] bool positive() const { return kind != SquashKind::None; }
  bool operator==(const Squash&) const = default;
};

inline constexpr double kDefaultTailBound = 6.0;
inline constexpr double kMinBinWidth = 1e-3;
inline constexpr double kMinBinHeight = 1e-3;
inline constexpr double kMinDerivative = 1e-3;

struct SplineFlowParams {
  int bins = 9;
  double tail_bound = kDefaultTailBound;
  Squash squash;
  Eigen::VectorXd raw;

  static int param_count(int bins) { return 3 * bins - 1; }
  static SplineFlowParams identity(int bins, Squash squash,
                                   double tail_bound = kDefaultTailBound);

  /// Throws DomainError on malformed or non-finite parameters.
  void validate() const;
};

struct FlowValue {
  double value = 0.0;
  double logdet = 0.0;
};

// ---------------------------------------------------------------------------
// Generic implementation, usable with T = double or T = ad::Var.

template <class T>
struct SplineKnots {
  std::vector<T> x;  // K + 1 input knots
  std::vector<T> y;  // K + 1 output knots
  std::vector<T> d;  // K + 1 knot derivatives, d[0] = d[K] = 1
  double bound = kDefaultTailBound;

  [[nodiscard]] int bins() const { return static_cast<int>(x.size()) - 1; }
};

namespace detail {

template <class T>
std::vector<T> bin_sizes(std::span<const T> u, double min_size, double total) {
  using std::exp;
  const std::size_t k = u.size();
  double m = -INFINITY;
  for (const T& v : u) m = std::max(m, ad::value(v));
  std::vector<T> e;
  e.reserve(k);
  T sum(0.0);
  for (const T& v : u) {
    e.push_back(exp(v - m));
    sum = sum + e.back();
  }
  const double free_mass = 1.0 - min_size * static_cast<double>(k);
  for (auto& v : e) v = (min_size + free_mass * (v / sum)) * total;
  return e;
}

template <class T>
std::vector<T> cumulative_knots(const std::vector<T>& sizes, double bound) {
  std::vector<T> knots;
  knots.reserve(sizes.size() + 1);
  knots.emplace_back(-bound);
  T acc(-bound);
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    acc = acc + sizes[i];
    knots.push_back(acc);
  }
  knots.emplace_back(bound);
  return knots;
}

template <class T>
std::size_t find_bin(const std::vector<T>& knots, double v) {
  // knots are sorted; returns k with knots[k] <= v < knots[k+1]
  std::size_t lo = 0;
  std::size_t hi = knots.size() - 1;
  while (hi - lo > 1) {
    const std::size_t mid = (lo + hi) / 2;
    if (ad::value(knots[mid]) <= v) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

}  // namespace detail

template <class T>
SplineKnots<T> make_knots(std::span<const T> raw, int bins, double bound) {
  using elliptic::softplus;
  using ad::softplus;
  const auto k = static_cast<std::size_t>(bins);
  SplineKnots<T> kn;
  kn.bound = bound;
  const auto widths = detail::bin_sizes<T>(raw.subspan(0, k), kMinBinWidth, 2.0 * bound);
  const auto heights = detail::bin_sizes<T>(raw.subspan(k, k), kMinBinHeight, 2.0 * bound);
  kn.x = detail::cumulative_knots(widths, bound);
  kn.y = detail::cumulative_knots(heights, bound);
  kn.d.reserve(k + 1);
  kn.d.emplace_back(1.0);
  const double scale = (1.0 - kMinDerivative) / std::numbers::ln2;
  for (std::size_t i = 0; i + 1 < k; ++i) {
    kn.d.push_back(kMinDerivative + scale * softplus(raw[2 * k + i]));
  }
  kn.d.emplace_back(1.0);
  return kn;
}

/// Spline value and log-derivative at z.
template <class T>
std::pair<T, T> spline_forward(const SplineKnots<T>& kn, const T& z) {
  using std::log;
  using ad::log;
  const double zv = ad::value(z);
  if (zv <= -kn.bound || zv >= kn.bound) return {z, T(0.0)};
  const std::size_t k = detail::find_bin(kn.x, zv);
  const T w = kn.x[k + 1] - kn.x[k];
  const T h = kn.y[k + 1] - kn.y[k];
  const T s = h / w;
  const T theta = (z - kn.x[k]) / w;
  const T one_minus = 1.0 - theta;
  const T tt = theta * one_minus;
  const T& d0 = kn.d[k];
  const T& d1 = kn.d[k + 1];
  const T den = s + (d0 + d1 - 2.0 * s) * tt;
  const T out = kn.y[k] + h * (s * theta * theta + d0 * tt) / den;
  const T dnum = s * s * (d1 * theta * theta + 2.0 * s * tt + d0 * one_minus * one_minus);
  return {out, log(dnum) - 2.0 * log(den)};
}

/// Spline inverse and its log-derivative (negative forward logdet).
template <class T>
std::pair<T, T> spline_inverse(const SplineKnots<T>& kn, const T& x) {
  using std::log;
  using std::sqrt;
  using ad::log;
  using ad::sqrt;
  const double xv = ad::value(x);
  if (xv <= -kn.bound || xv >= kn.bound) return {x, T(0.0)};
  const std::size_t k = detail::find_bin(kn.y, xv);
  const T w = kn.x[k + 1] - kn.x[k];
  const T h = kn.y[k + 1] - kn.y[k];
  const T s = h / w;
  const T& d0 = kn.d[k];
  const T& d1 = kn.d[k + 1];
  const T dy = x - kn.y[k];
  const T slope_sum = d0 + d1 - 2.0 * s;
  const T a = h * (s - d0) + dy * slope_sum;
  const T b = h * d0 - dy * slope_sum;
  const T c = -s * dy;
  T disc = b * b - 4.0 * a * c;
  if (ad::value(disc) < 0.0) disc = T(0.0);
  const T theta = (2.0 * c) / (-b - sqrt(disc));
  const T z = theta * w + kn.x[k];
  const T one_minus = 1.0 - theta;
  const T tt = theta * one_minus;
  const T den = s + slope_sum * tt;
  const T dnum = s * s * (d1 * theta * theta + 2.0 * s * tt + d0 * one_minus * one_minus);
  return {z, 2.0 * log(den) - log(dnum)};
}

template <class T>
std::pair<T, T> squash_forward(const Squash& sq, const T& y) {
  using elliptic::log_sigmoid;
  using elliptic::sigmoid;
  using elliptic::softplus;
  using ad::log_sigmoid;
  using ad::sigmoid;
  using ad::softplus;
  switch (sq.kind) {
    case SquashKind::Softplus:
      return {softplus(y), log_sigmoid(y)};
    case SquashKind::ScaledSigmoid:
      return {sq.max * sigmoid(y), std::log(sq.max) + log_sigmoid(y) + log_sigmoid(-y)};
    case SquashKind::None:
      break;
  }
  return {y, T(0.0)};
}

/// Inverse squash; the caller guarantees x lies in the image.
template <class T>
std::pair<T, T> squash_inverse(const Squash& sq, const T& x) {
  using elliptic::log_sigmoid;
  using elliptic::logit;
  using elliptic::softplus_inverse;
  using ad::log_sigmoid;
  using ad::logit;
  using ad::softplus_inverse;
  switch (sq.kind) {
    case SquashKind::Softplus: {
      const T y = softplus_inverse(x);
      return {y, -log_sigmoid(y)};
    }
    case SquashKind::ScaledSigmoid: {
      const T y = logit(x / sq.max);
      return {y, -(std::log(sq.max) + log_sigmoid(y) + log_sigmoid(-y))};
    }
    case SquashKind::None:
      break;
  }
  return {x, T(0.0)};
}

/// True when x lies strictly inside the image of the squash.
bool in_squash_image(const Squash& sq, double x);

template <class T>
std::pair<T, T> flow_forward(const SplineKnots<T>& kn, const Squash& sq, const T& z) {
  const auto [y, ld1] = spline_forward(kn, z);
  const auto [x, ld2] = squash_forward(sq, y);
  return {x, ld1 + ld2};
}

template <class T>
std::pair<T, T> flow_inverse(const SplineKnots<T>& kn, const Squash& sq, const T& x) {
  const auto [y, ld2] = squash_inverse(sq, x);
  const auto [z, ld1] = spline_inverse(kn, y);
  return {z, ld1 + ld2};
}

/// log density of x = T(zeta), zeta ~ N(0, 1).
template <class T>
T flow_log_prob(const SplineKnots<T>& kn, const Squash& sq, const T& x) {
  const auto [z, ld] = flow_inverse(kn, sq, x);
  return -0.5 * (kLog2Pi + z * z) + ld;
}

// ---------------------------------------------------------------------------
// Double-precision API with cached knots.

class SplineFlow {
 public:
  explicit SplineFlow(SplineFlowParams params);

  [[nodiscard]] FlowValue forward(double z) const;
  /// Throws DomainError when x lies outside the image.
  [[nodiscard]] FlowValue inverse(double x) const;
  [[nodiscard]] double log_prob(double x) const;
  [[nodiscard]] std::vector<double> sample(std::size_t n, Rng& rng) const;

  [[nodiscard]] const SplineFlowParams& params() const { return params_; }
  [[nodiscard]] const SplineKnots<double>& knots() const { return knots_; }

 private:
  SplineFlowParams params_;
  SplineKnots<double> knots_;
};

FlowValue forward(double z, const SplineFlowParams& params);
FlowValue inverse(double x, const SplineFlowParams& params);
double log_prob(double x, const SplineFlowParams& params);
std::vector<double> sample(const SplineFlowParams& params, std::size_t n, Rng& rng);

/// log_prob at x and its gradient with respect to the unconstrained parameters.
ad::Gradient log_prob_gradient(double x, const SplineFlowParams& params);

/// Records the knots of `params` on `tape` with the raw parameters as leaves.
/// `leaves` receives the leaf variables in parameter order.
SplineKnots<ad::Var> record_knots(ad::Tape& tape, const SplineFlowParams& params,
                                  std::vector<ad::Var>& leaves);

/// Promotes double knots to constant Vars (no tape).
SplineKnots<ad::Var> constant_knots(const SplineKnots<double>& kn);

}  // namespace elliptic

#include "elliptic/elliptical.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "elliptic/errors.hpp"
#include "elliptic/scalar_math.hpp"

namespace elliptic {

EllipticalDistribution EllipticalDistribution::from_scale(Eigen::VectorXd mu,
                                                          const Eigen::MatrixXd& scale,
                                                          MixingDistribution mixing) {
  if (scale.rows() != mu.size() || scale.cols() != mu.size()) {
    throw DimensionError("elliptical: scale matrix does not match the mean");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(scale);
  if (llt.info() != Eigen::Success) throw DegenerateKernelError("elliptical: singular scale matrix");
  EllipticalDistribution d{std::move(mu), llt.matrixL(), std::move(mixing)};
  d.validate();
  return d;
}

void EllipticalDistribution::validate() const {
  if (scale_chol.rows() != mu.size() || scale_chol.cols() != mu.size()) {
    throw DimensionError("elliptical: scale factor does not match the mean");
  }
  if (!(scale_chol.diagonal().array() > 0.0).all()) {
    throw DegenerateKernelError("elliptical: scale factor has a nonpositive diagonal");
  }
  elliptic::validate(mixing);
}

double mahalanobis(const EllipticalDistribution& dist, const Eigen::VectorXd& y) {
  if (y.size() != dist.mu.size()) {
    throw DimensionError("mahalanobis: expected length " + std::to_string(dist.mu.size()) + ", got " +
                         std::to_string(y.size()));
  }
  const Eigen::VectorXd r = dist.scale_chol.triangularView<Eigen::Lower>().solve(y - dist.mu);
  return r.squaredNorm();
}

double joint_log_density(const EllipticalDistribution& dist, const Eigen::VectorXd& y,
                         const BaseQuadrature& quad) {
  dist.validate();
  const double u = mahalanobis(dist, y);
  const double half_logdet = dist.scale_chol.diagonal().array().log().sum();
  return scale_mixture_log_kernel(dist.mixing, static_cast<int>(dist.dim()), u, quad) - half_logdet;
}

Eigen::VectorXd sample_path(const Kernel& kernel, const Eigen::MatrixXd& x,
                            const MixingDistribution& mixing, Rng& rng) {
  const GramMatrix k = gram_with_jitter(kernel, x);
  const double xi = sample_mix(mixing, 1, rng).front();
  Eigen::VectorXd z(x.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = standard_normal(rng);
  return std::sqrt(xi) * (k.chol() * z);
}

TabulatedMixing::TabulatedMixing(std::vector<double> grid, std::vector<double> log_unnormalized)
    : grid_(std::move(grid)) {
  const std::size_t n = grid_.size();
  if (n < 2 || log_unnormalized.size() != n) throw DimensionError("tabulated mixing: bad grid");
  // trapezoid in t = log w: int p(w) dw = int p(e^t) e^t dt
  std::vector<double> log_mass(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double left = k > 0 ? std::log(grid_[k]) - std::log(grid_[k - 1]) : 0.0;
    const double right = k + 1 < n ? std::log(grid_[k + 1]) - std::log(grid_[k]) : 0.0;
    log_mass[k] = log_unnormalized[k] + std::log(grid_[k]) + std::log(0.5 * (left + right));
  }
  const double log_z = logsumexp(log_mass);
  if (!std::isfinite(log_z)) throw NumericalError("tabulated mixing: density vanishes on the grid");
  density_.resize(n);
  mass_.resize(n);
  cdf_.resize(n);
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    density_[k] = std::exp(log_unnormalized[k] - log_z);
    mass_[k] = std::exp(log_mass[k] - log_z);
    acc += mass_[k];
    cdf_[k] = acc;
    mean_ += mass_[k] * grid_[k];
  }
}

double TabulatedMixing::density(double w) const {
  if (!(w >= grid_.front() && w <= grid_.back())) return 0.0;
  const auto it = std::upper_bound(grid_.begin(), grid_.end(), w);
  const std::size_t hi = std::min<std::size_t>(static_cast<std::size_t>(it - grid_.begin()), grid_.size() - 1);
  const std::size_t lo = hi - 1;
  const double t = (std::log(w) - std::log(grid_[lo])) / (std::log(grid_[hi]) - std::log(grid_[lo]));
  if (density_[lo] <= 0.0 || density_[hi] <= 0.0) return (1.0 - t) * density_[lo] + t * density_[hi];
  return std::exp((1.0 - t) * std::log(density_[lo]) + t * std::log(density_[hi]));
}

std::vector<double> TabulatedMixing::sample(std::size_t n, Rng& rng) const {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> out(n);
  const double total = cdf_.back();
  for (auto& v : out) {
    const double p = unif(rng) * total;
    const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), p);
    const std::size_t hi = std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
    if (hi == 0) {
      v = grid_.front();
      continue;
    }
    const std::size_t lo = hi - 1;
    const double span = cdf_[hi] - cdf_[lo];
    const double t = span > 0.0 ? (p - cdf_[lo]) / span : 0.0;
    v = std::exp((1.0 - t) * std::log(grid_[lo]) + t * std::log(grid_[hi]));
  }
  return out;
}

double ConditionalDistribution::mixing_mean() const {
  if (const auto* d = std::get_if<Dirac>(&mixing)) return d->s;
  return std::get<TabulatedMixing>(mixing).mean();
}

Eigen::MatrixXd ConditionalDistribution::covariance() const {
  return mixing_mean() * (scale_chol * scale_chol.transpose());
}

double ConditionalDistribution::log_density(const Eigen::VectorXd& y2) const {
  if (y2.size() != mu.size()) throw DimensionError("conditional: length mismatch");
  const double u = scale_chol.triangularView<Eigen::Lower>().solve(y2 - mu).squaredNorm();
  const double half_logdet = scale_chol.diagonal().array().log().sum();
  const double half_n = 0.5 * static_cast<double>(mu.size());
  if (const auto* d = std::get_if<Dirac>(&mixing)) {
    return scale_mixture_log_kernel(*d, static_cast<int>(mu.size()), u) - half_logdet;
  }
  const auto& tab = std::get<TabulatedMixing>(mixing);
  const double p = tab.expect([&](double w) { return std::exp(-half_n * (kLog2Pi + std::log(w)) - 0.5 * u / w); });
  return std::log(p) - half_logdet;
}

ConditionalDistribution condition(const EllipticalDistribution& dist,
                                  const std::vector<Eigen::Index>& observed,
                                  const Eigen::VectorXd& y1) {
  dist.validate();
  const Eigen::Index n = dist.dim();
  if (observed.empty() || static_cast<Eigen::Index>(observed.size()) >= n) {
    throw DimensionError("condition: observed set must be a nonempty proper subset");
  }
  if (static_cast<Eigen::Index>(observed.size()) != y1.size()) {
    throw DimensionError("condition: observed values do not match the observed indices");
  }
  std::vector<char> is_obs(static_cast<std::size_t>(n), 0);
  for (auto i : observed) {
    if (i < 0 || i >= n || is_obs[static_cast<std::size_t>(i)]) {
      throw DimensionError("condition: invalid or repeated observed index");
    }
    is_obs[static_cast<std::size_t>(i)] = 1;
  }
  std::vector<Eigen::Index> rest;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!is_obs[static_cast<std::size_t>(i)]) rest.push_back(i);
  }
  const Eigen::MatrixXd sigma = dist.scale();
  const Eigen::MatrixXd s11 = sigma(observed, observed);
  const Eigen::MatrixXd s12 = sigma(observed, rest);
  const Eigen::MatrixXd s22 = sigma(rest, rest);
  Eigen::LLT<Eigen::MatrixXd> llt(s11);
  if (llt.info() != Eigen::Success) throw DegenerateKernelError("condition: singular observed block");
  const Eigen::VectorXd r1 = y1 - dist.mu(observed);
  const Eigen::VectorXd alpha = llt.solve(r1);
  const double u1 = r1.dot(alpha);
  ConditionalDistribution out;
  out.mu = dist.mu(rest) + s12.transpose() * alpha;
  const Eigen::MatrixXd s21 = s22 - s12.transpose() * llt.solve(s12);
  Eigen::LLT<Eigen::MatrixXd> llt2(0.5 * (s21 + s21.transpose()));
  if (llt2.info() != Eigen::Success) throw DegenerateKernelError("condition: singular conditional scale");
  out.scale_chol = llt2.matrixL();

  if (const auto* d = std::get_if<Dirac>(&dist.mixing)) {
    out.mixing = *d;
    return out;
  }
  const double median = base_transform(dist.mixing, 0.0);
  const double lo = std::log(1e-4 * median);
  const double hi = std::log(1e4 * median);
  const double half_n1 = 0.5 * static_cast<double>(observed.size());
  std::vector<double> grid(kConditionalGridSize);
  std::vector<double> logp(kConditionalGridSize);
  for (int k = 0; k < kConditionalGridSize; ++k) {
    const double w = std::exp(lo + (hi - lo) * k / (kConditionalGridSize - 1));
    grid[static_cast<std::size_t>(k)] = w;
    const auto prior = log_density_mix(dist.mixing, w);
    logp[static_cast<std::size_t>(k)] = std::get<double>(prior) - half_n1 * std::log(w) - 0.5 * u1 / w;
  }
  out.mixing = TabulatedMixing(std::move(grid), std::move(logp));
  return out;
}

double credible_coverage(std::span<const double> xi, double z) {
  if (xi.empty()) throw DimensionError("credible coverage: no mixing samples");
  if (!(z >= 0.0)) throw DomainError("credible coverage: half-width must be nonnegative");
  double acc = 0.0;
  for (double x : xi) {
    if (!(x > 0.0)) throw DomainError("credible coverage: mixing samples must be positive");
    acc += std::erf(z / std::sqrt(2.0 * x));
  }
  return acc / static_cast<double>(xi.size());
}

double credible_halfwidth(std::span<const double> xi, double target) {
  if (!(target > 0.0 && target < 1.0)) throw DomainError("credible half-width: target must lie in (0, 1)");
  double lo = 0.0;
  double hi = 1.0;
  int iter = 0;
  while (credible_coverage(xi, hi) < target) {
    lo = hi;
    hi *= 2.0;
    if (++iter > 200) throw NumericalError("credible half-width: failed to bracket the target");
  }
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double c = credible_coverage(xi, mid);
    if (std::abs(c - target) < 1e-8 && hi - lo < 1e-10 * std::max(1.0, mid)) return mid;
    if (c < target) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= std::numeric_limits<double>::epsilon() * hi) {
      if (std::abs(c - target) < 1e-8) return mid;
      break;
    }
  }
  throw NumericalError("credible half-width: bisection did not converge in 200 iterations");
}

}  // namespace elliptic

#pragma once

// Positive mixing distributions for Gaussian scale mixtures.
//
// A mixing variable w > 0 turns N(mu, Sigma) into the consistent elliptical
// family  p(y) = int N(y; mu, w Sigma) p(w) dw.  Three families are
// supported: a point mass (the Gaussian case), the scaled inverse
// chi-square (the Student-t case) and a squashed spline flow.

#include <functional>
#include <variant>
#include <vector>

#include "elliptic/quadrature.hpp"
#include "elliptic/random.hpp"
#include "elliptic/spline_flow.hpp"

namespace elliptic {

struct Dirac {
  double s = 1.0;
};

struct ScaleInvChiSquare {
  double nu = 4.0;
  double tau2 = 1.0;
};

struct FlowMixing {
  SplineFlowParams flow;
};

using MixingDistribution = std::variant<Dirac, ScaleInvChiSquare, FlowMixing>;

/// Marker returned instead of a density for point masses.
struct PointMass {
  double location = 1.0;
};

using MixingLogDensity = std::variant<double, PointMass>;

/// Throws DomainError when parameters are invalid or support leaves (0, inf).
void validate(const MixingDistribution& dist);

[[nodiscard]] bool has_density(const MixingDistribution& dist);

std::vector<double> sample_mix(const MixingDistribution& dist, std::size_t n, Rng& rng);

/// log p(w); a PointMass marker for Dirac. Throws DomainError for w <= 0.
MixingLogDensity log_density_mix(const MixingDistribution& dist, double w);

/// Analytic mean where available, otherwise a Monte-Carlo estimate from
/// n_mc draws of `rng`. Infinite for ScaleInvChiSquare with nu <= 2.
double mean_mix(const MixingDistribution& dist, std::size_t n_mc, Rng& rng);

/// w(zeta) such that w(zeta), zeta ~ N(0, 1), has the law of `dist`.
double base_transform(const MixingDistribution& dist, double zeta);

/// E[h(w)] by the base-space trapezoid rule.
double expect(const MixingDistribution& dist, const std::function<double(double)>& h,
              const BaseQuadrature& quad = BaseQuadrature::standard());

/// log E_w[(2 pi w)^{-n/2} exp(-u / (2 w))], the radial part of an n-dimensional
/// scale mixture at squared Mahalanobis distance u. Dirac and
/// ScaleInvChiSquare use closed forms unless `force_quadrature` is set.
/// Flow images w_k = T(zeta_k) and log-derivatives recorded on `tape`, with
/// the raw flow parameters as leaves.
struct RecordedFlow {
  std::vector<ad::Var> leaves;
  std::vector<ad::Var> values;
  std::vector<ad::Var> logdets;
};
RecordedFlow record_flow(ad::Tape& tape, const SplineFlowParams& params, std::span<const double> zetas,
                         bool with_logdet = false);

double scale_mixture_log_kernel(const MixingDistribution& dist, int n, double u,
                                const BaseQuadrature& quad = BaseQuadrature::standard(),
                                bool force_quadrature = false);

}  // namespace elliptic

#include "elliptic/mixing.hpp"

#include <cmath>
#include <limits>
#include <string>

#include <boost/math/special_functions/gamma.hpp>

#include "elliptic/errors.hpp"
#include "elliptic/scalar_math.hpp"

namespace elliptic {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double sics_log_density(const ScaleInvChiSquare& d, double w) {
  const double half_nu = 0.5 * d.nu;
  return half_nu * std::log(half_nu * d.tau2) - std::lgamma(half_nu) - (half_nu + 1.0) * std::log(w) -
         half_nu * d.tau2 / w;
}

}  // namespace

void validate(const MixingDistribution& dist) {
  std::visit(Overloaded{
                 [](const Dirac& d) {
                   if (!(d.s > 0.0) || !std::isfinite(d.s)) {
                     throw DomainError("mixing: point mass must sit at a positive finite value");
                   }
                 },
                 [](const ScaleInvChiSquare& d) {
                   if (!(d.nu > 0.0 && d.tau2 > 0.0) || !std::isfinite(d.nu) || !std::isfinite(d.tau2)) {
                     throw DomainError("mixing: scaled inverse chi-square needs nu > 0 and tau2 > 0");
                   }
                 },
                 [](const FlowMixing& f) {
                   f.flow.validate();
                   if (!f.flow.squash.positive()) {
                     throw DomainError("mixing: flow mixing needs a positive output squash");
                   }
                 },
             },
             dist);
}

bool has_density(const MixingDistribution& dist) { return !std::holds_alternative<Dirac>(dist); }

std::vector<double> sample_mix(const MixingDistribution& dist, std::size_t n, Rng& rng) {
  validate(dist);
  return std::visit(Overloaded{
                        [&](const Dirac& d) { return std::vector<double>(n, d.s); },
                        [&](const ScaleInvChiSquare& d) {
                          std::chi_squared_distribution<double> chi2(d.nu);
                          std::vector<double> out(n);
                          for (auto& v : out) v = d.nu * d.tau2 / chi2(rng);
                          return out;
                        },
                        [&](const FlowMixing& f) { return SplineFlow(f.flow).sample(n, rng); },
                    },
                    dist);
}

MixingLogDensity log_density_mix(const MixingDistribution& dist, double w) {
  validate(dist);
  if (const auto* d = std::get_if<Dirac>(&dist)) return PointMass{d->s};
  if (!(w > 0.0)) throw DomainError("mixing: density evaluated at nonpositive value " + std::to_string(w));
  if (const auto* d = std::get_if<ScaleInvChiSquare>(&dist)) return sics_log_density(*d, w);
  const auto& f = std::get<FlowMixing>(dist);
  if (!in_squash_image(f.flow.squash, w)) return -std::numeric_limits<double>::infinity();
  return SplineFlow(f.flow).log_prob(w);
}

double mean_mix(const MixingDistribution& dist, std::size_t n_mc, Rng& rng) {
  validate(dist);
  return std::visit(Overloaded{
                        [](const Dirac& d) { return d.s; },
                        [](const ScaleInvChiSquare& d) {
                          if (d.nu <= 2.0) return std::numeric_limits<double>::infinity();
                          return d.nu * d.tau2 / (d.nu - 2.0);
                        },
                        [&](const FlowMixing& f) {
                          if (n_mc == 0) throw ConfigError("mean_mix: Monte-Carlo sample count must be positive");
                          const auto xs = SplineFlow(f.flow).sample(n_mc, rng);
                          double s = 0.0;
                          for (double x : xs) s += x;
                          return s / static_cast<double>(n_mc);
                        },
                    },
                    dist);
}

double base_transform(const MixingDistribution& dist, double zeta) {
  return std::visit(Overloaded{
                        [](const Dirac& d) { return d.s; },
                        [&](const ScaleInvChiSquare& d) {
                          // w = nu tau2 / X with P(X <= x) = Phi(-zeta), X ~ chi2(nu)
                          const double p = normal_cdf(-zeta);
                          const double x = 2.0 * boost::math::gamma_p_inv(0.5 * d.nu, p);
                          return d.nu * d.tau2 / x;
                        },
                        [&](const FlowMixing& f) {
                          const auto kn = make_knots<double>(
                              std::span<const double>(f.flow.raw.data(), f.flow.raw.size()), f.flow.bins,
                              f.flow.tail_bound);
                          return flow_forward(kn, f.flow.squash, zeta).first;
                        },
                    },
                    dist);
}

double expect(const MixingDistribution& dist, const std::function<double(double)>& h,
              const BaseQuadrature& quad) {
  validate(dist);
  if (const auto* d = std::get_if<Dirac>(&dist)) return h(d->s);
  const auto nodes = quad.nodes();
  const auto weights = quad.weights();
  double acc = 0.0;
  if (const auto* f = std::get_if<FlowMixing>(&dist)) {
    const SplineFlow flow(f->flow);
    for (std::size_t k = 0; k < nodes.size(); ++k) acc += weights[k] * h(flow.forward(nodes[k]).value);
    return acc;
  }
  for (std::size_t k = 0; k < nodes.size(); ++k) acc += weights[k] * h(base_transform(dist, nodes[k]));
  return acc;
}

RecordedFlow record_flow(ad::Tape& tape, const SplineFlowParams& params, std::span<const double> zetas,
                         bool with_logdet) {
  RecordedFlow out;
  const auto kn = record_knots(tape, params, out.leaves);
  out.values.reserve(zetas.size());
  for (double z : zetas) {
    auto [x, ld] = flow_forward(kn, params.squash, ad::Var(z));
    out.values.push_back(x);
    if (with_logdet) out.logdets.push_back(ld);
  }
  return out;
}

double scale_mixture_log_kernel(const MixingDistribution& dist, int n, double u,
                                const BaseQuadrature& quad, bool force_quadrature) {
  validate(dist);
  if (n < 1) throw DimensionError("scale mixture: dimension must be positive");
  if (!(u >= 0.0)) throw DomainError("scale mixture: squared distance must be nonnegative");
  const double half_n = 0.5 * n;
  if (const auto* d = std::get_if<Dirac>(&dist)) {
    return -half_n * (kLog2Pi + std::log(d->s)) - 0.5 * u / d->s;
  }
  if (const auto* d = std::get_if<ScaleInvChiSquare>(&dist); d != nullptr && !force_quadrature) {
    // multivariate Student-t with nu degrees of freedom and scale tau2
    const double nu = d->nu;
    return std::lgamma(0.5 * (nu + n)) - std::lgamma(0.5 * nu) - half_n * std::log(nu * M_PI * d->tau2) -
           0.5 * (nu + n) * std::log1p(u / (nu * d->tau2));
  }
  const auto nodes = quad.nodes();
  const auto logw = quad.log_weights();
  std::vector<double> terms(nodes.size());
  std::vector<double> ws(nodes.size());
  if (const auto* f = std::get_if<FlowMixing>(&dist)) {
    const SplineFlow flow(f->flow);
    for (std::size_t k = 0; k < nodes.size(); ++k) ws[k] = flow.forward(nodes[k]).value;
  } else {
    for (std::size_t k = 0; k < nodes.size(); ++k) ws[k] = base_transform(dist, nodes[k]);
  }
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    terms[k] = logw[k] - half_n * (kLog2Pi + std::log(ws[k])) - 0.5 * u / ws[k];
  }
  return logsumexp(terms);
}

}  // namespace elliptic

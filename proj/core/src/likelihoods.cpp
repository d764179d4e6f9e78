#include "elliptic/likelihoods.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "elliptic/adam.hpp"
#include "elliptic/autodiff.hpp"
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

void check_net(const MLPParams& net, int input_dim, int output_dim, const char* what) {
  net.validate();
  if (input_dim >= 0 && net.input_dim() != input_dim) {
    throw DimensionError(std::string(what) + ": network expects " + std::to_string(net.input_dim()) +
                         " inputs, data has " + std::to_string(input_dim));
  }
  if (net.output_dim() != output_dim) {
    throw DimensionError(std::string(what) + ": network must have " + std::to_string(output_dim) + " outputs");
  }
}

}  // namespace

void validate(const Likelihood& lik, int input_dim) {
  std::visit(Overloaded{
                 [](const GaussianLik& g) {
                   if (!std::isfinite(g.log_variance)) throw DomainError("gaussian likelihood: non-finite variance");
                 },
                 [](const EllipticalNoise& e) {
                   validate(e.mixing);
                   if (const auto* f = std::get_if<FlowMixing>(&e.mixing);
                       f != nullptr && f->flow.squash.kind != SquashKind::Softplus) {
                     throw DomainError("elliptical noise: the noise flow must use a Softplus squash");
                   }
                 },
                 [&](const HeteroGaussian& h) { check_net(h.net, input_dim, 1, "hetero gaussian"); },
                 [&](const HeteroElliptical& h) {
                   if (h.bins < 1) throw DomainError("hetero elliptical: bin count must be positive");
                   check_net(h.net, input_dim, SplineFlowParams::param_count(h.bins), "hetero elliptical");
                 },
                 [](const BernoulliSigmoid&) {},
             },
             lik);
}

bool is_classification(const Likelihood& lik) { return std::holds_alternative<BernoulliSigmoid>(lik); }

const char* likelihood_name(const Likelihood& lik) {
  return std::visit(Overloaded{
                        [](const GaussianLik&) { return "gaussian"; },
                        [](const EllipticalNoise&) { return "elliptical"; },
                        [](const HeteroGaussian&) { return "hetero-gaussian"; },
                        [](const HeteroElliptical&) { return "hetero-elliptical"; },
                        [](const BernoulliSigmoid&) { return "bernoulli"; },
                    },
                    lik);
}

SplineFlowParams hetero_flow_params(const HeteroElliptical& lik, const Eigen::VectorXd& x) {
  check_net(lik.net, static_cast<int>(x.size()), SplineFlowParams::param_count(lik.bins), "hetero elliptical");
  SplineFlowParams p;
  p.bins = lik.bins;
  p.tail_bound = lik.tail_bound;
  p.squash = Squash::softplus();
  p.raw = mlp_forward(lik.net, x);
  return p;
}

double hetero_variance(const HeteroGaussian& lik, const Eigen::VectorXd& x) {
  check_net(lik.net, static_cast<int>(x.size()), 1, "hetero gaussian");
  return softplus(mlp_forward(lik.net, x)[0]) + kHeteroVarianceFloor;
}

MixingDistribution noise_mixing_at(const Likelihood& lik, const Eigen::VectorXd& x) {
  return std::visit(Overloaded{
                        [](const GaussianLik& g) -> MixingDistribution { return Dirac{std::exp(g.log_variance)}; },
                        [](const EllipticalNoise& e) { return e.mixing; },
                        [&](const HeteroGaussian& h) -> MixingDistribution { return Dirac{hetero_variance(h, x)}; },
                        [&](const HeteroElliptical& h) -> MixingDistribution {
                          return FlowMixing{hetero_flow_params(h, x)};
                        },
                        [](const BernoulliSigmoid&) -> MixingDistribution {
                          throw ConfigError("bernoulli likelihood has no noise mixing");
                        },
                    },
                    lik);
}

double marginal_log_lik_point(const Likelihood& lik, double y, double f, const Eigen::VectorXd& x,
                              const BaseQuadrature& quad) {
  if (!std::isfinite(y) || !std::isfinite(f)) throw DomainError("likelihood: non-finite inputs");
  if (const auto* b = std::get_if<BernoulliSigmoid>(&lik)) {
    (void)b;
    if (y != 0.0 && y != 1.0) throw DomainError("bernoulli likelihood: labels must be 0 or 1");
    return y == 1.0 ? log_sigmoid(f) : log_sigmoid(-f);
  }
  const double r = y - f;
  return scale_mixture_log_kernel(noise_mixing_at(lik, x), 1, r * r, quad);
}

Eigen::VectorXd likelihood_params(const Likelihood& lik) {
  return std::visit(Overloaded{
                        [](const GaussianLik& g) { return Eigen::VectorXd::Constant(1, g.log_variance).eval(); },
                        [](const EllipticalNoise& e) {
                          if (const auto* f = std::get_if<FlowMixing>(&e.mixing)) return f->flow.raw;
                          return Eigen::VectorXd();
                        },
                        [](const HeteroGaussian& h) { return h.net.flatten(); },
                        [](const HeteroElliptical& h) { return h.net.flatten(); },
                        [](const BernoulliSigmoid&) { return Eigen::VectorXd(); },
                    },
                    lik);
}

void set_likelihood_params(Likelihood& lik, const Eigen::VectorXd& theta) {
  const auto expect = [&](Eigen::Index n) {
    if (theta.size() != n) {
      throw DimensionError("likelihood: expected " + std::to_string(n) + " parameters, got " +
                           std::to_string(theta.size()));
    }
  };
  std::visit(Overloaded{
                 [&](GaussianLik& g) {
                   expect(1);
                   g.log_variance = theta[0];
                 },
                 [&](EllipticalNoise& e) {
                   if (auto* f = std::get_if<FlowMixing>(&e.mixing)) {
                     expect(f->flow.raw.size());
                     f->flow.raw = theta;
                   } else {
                     expect(0);
                   }
                 },
                 [&](HeteroGaussian& h) { h.net.unflatten(theta); },
                 [&](HeteroElliptical& h) { h.net.unflatten(theta); },
                 [&](BernoulliSigmoid&) { expect(0); },
             },
             lik);
}

NoiseNodes noise_nodes(const MixingDistribution& mixing, const BaseQuadrature& quad) {
  validate(mixing);
  NoiseNodes out;
  if (const auto* d = std::get_if<Dirac>(&mixing)) {
    out.log_weight = {0.0};
    out.omega = {d->s};
    return out;
  }
  out.log_weight.assign(quad.log_weights().begin(), quad.log_weights().end());
  out.omega.resize(quad.size());
  if (const auto* f = std::get_if<FlowMixing>(&mixing)) {
    const SplineFlow flow(f->flow);
    for (std::size_t k = 0; k < quad.size(); ++k) out.omega[k] = flow.forward(quad.nodes()[k]).value;
  } else {
    for (std::size_t k = 0; k < quad.size(); ++k) out.omega[k] = base_transform(mixing, quad.nodes()[k]);
  }
  return out;
}

double noise_log_lik(const NoiseNodes& nodes, double r, double extra_var, double weight,
                     std::span<double> omega_adj, double* d_dr) {
  const std::size_t n = nodes.omega.size();
  thread_local std::vector<double> terms;
  terms.resize(n);
  double m = -std::numeric_limits<double>::infinity();
  const double r2 = r * r;
  for (std::size_t k = 0; k < n; ++k) {
    const double v = nodes.omega[k] + extra_var;
    terms[k] = nodes.log_weight[k] - 0.5 * (kLog2Pi + std::log(v)) - 0.5 * r2 / v;
    m = std::max(m, terms[k]);
  }
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    terms[k] = std::exp(terms[k] - m);
    s += terms[k];
  }
  const double value = m + std::log(s);
  if (d_dr != nullptr || !omega_adj.empty()) {
    double dr = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double p = terms[k] / s;
      const double inv_v = 1.0 / (nodes.omega[k] + extra_var);
      dr -= p * r * inv_v;
      if (!omega_adj.empty()) omega_adj[k] += weight * p * 0.5 * inv_v * (r2 * inv_v - 1.0);
    }
    if (d_dr != nullptr) *d_dr = dr;
  }
  return value;
}

std::pair<double, double> gaussian_noise_fit(std::span<const double> residuals) {
  if (residuals.empty()) throw DimensionError("gaussian fit: no residuals");
  double ss = 0.0;
  for (double r : residuals) ss += r * r;
  const double var = ss / static_cast<double>(residuals.size());
  return {var, -0.5 * (kLog2Pi + std::log(var) + 1.0)};
}

FitNoiseResult fit_noise(std::span<const double> residuals, const FitNoiseConfig& config) {
  if (residuals.size() < 20) throw DimensionError("fit_noise: at least 20 residuals are required");
  for (double r : residuals) {
    if (!std::isfinite(r)) throw DomainError("fit_noise: non-finite residual");
  }
  if (config.iterations < 1) throw ConfigError("fit_noise: iteration count must be positive");
  const BaseQuadrature& quad = config.quad != nullptr ? *config.quad : BaseQuadrature::standard();
  SplineFlowParams params = SplineFlowParams::identity(config.bins, Squash::softplus());
  Adam adam(AdamConfig{.lr = config.lr});
  const double inv_n = 1.0 / static_cast<double>(residuals.size());

  FitNoiseResult result;
  double best = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_raw = params.raw;
  NoiseNodes nodes;
  nodes.log_weight.assign(quad.log_weights().begin(), quad.log_weights().end());
  nodes.omega.resize(quad.size());
  std::vector<double> adj(quad.size());
  ad::Tape tape;
  for (int it = 0; it < config.iterations; ++it) {
    tape.clear();
    const auto rec = record_flow(tape, params, quad.nodes());
    for (std::size_t k = 0; k < quad.size(); ++k) nodes.omega[k] = rec.values[k].v;
    std::fill(adj.begin(), adj.end(), 0.0);
    double obj = 0.0;
    for (double r : residuals) obj += noise_log_lik(nodes, r, 0.0, inv_n, adj);
    obj *= inv_n;
    result.trace.push_back(obj);
    if (!std::isfinite(obj)) {
      throw DivergenceError("fit_noise: objective became non-finite at iteration " + std::to_string(it),
                            result.trace);
    }
    if (obj > best) {
      best = obj;
      best_raw = params.raw;
    }
    if (it >= 200 && result.trace[static_cast<std::size_t>(it)] - result.trace[static_cast<std::size_t>(it - 200)] <
                         config.tol) {
      break;
    }
    std::vector<std::pair<ad::Var, double>> seeds;
    seeds.reserve(quad.size());
    for (std::size_t k = 0; k < quad.size(); ++k) seeds.emplace_back(rec.values[k], -adj[k]);
    const auto grads = tape.backward(seeds);
    ParamBlock block("noise_flow", params.raw);
    for (std::size_t i = 0; i < rec.leaves.size(); ++i) {
      block.grad[static_cast<Eigen::Index>(i)] = grads[static_cast<std::size_t>(rec.leaves[i].id)];
    }
    std::span<ParamBlock> one(&block, 1);
    adam.step(one);
    params.raw = block.value;
  }
  params.raw = best_raw;
  result.model.mixing = FlowMixing{params};
  result.mean_log_lik = best;
  return result;
}

}  // namespace elliptic

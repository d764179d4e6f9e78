#include "elliptic/spline_flow.hpp"

#include <cmath>
#include <string>

#include "elliptic/errors.hpp"

namespace elliptic {

SplineFlowParams SplineFlowParams::identity(int bins, Squash squash, double tail_bound) {
  SplineFlowParams p;
  p.bins = bins;
  p.tail_bound = tail_bound;
  p.squash = squash;
  p.raw = Eigen::VectorXd::Zero(param_count(bins));
  return p;
}

void SplineFlowParams::validate() const {
  if (bins < 1) throw DomainError("spline flow: bin count must be positive");
  if (!(tail_bound > 0.0) || !std::isfinite(tail_bound)) {
    throw DomainError("spline flow: tail bound must be positive and finite");
  }
  if (raw.size() != param_count(bins)) {
    throw DomainError("spline flow: expected " + std::to_string(param_count(bins)) +
                      " parameters, got " + std::to_string(raw.size()));
  }
  if (!raw.allFinite()) throw DomainError("spline flow: non-finite parameters");
  if (squash.kind == SquashKind::ScaledSigmoid && !(squash.max > 0.0 && std::isfinite(squash.max))) {
    throw DomainError("spline flow: sigmoid squash maximum must be positive");
  }
}

bool in_squash_image(const Squash& sq, double x) {
  if (!std::isfinite(x)) return false;
  switch (sq.kind) {
    case SquashKind::Softplus:
      return x > 0.0;
    case SquashKind::ScaledSigmoid:
      return x > 0.0 && x < sq.max;
    case SquashKind::None:
      break;
  }
  return true;
}

SplineFlow::SplineFlow(SplineFlowParams params) : params_(std::move(params)) {
  params_.validate();
  knots_ = make_knots<double>(std::span<const double>(params_.raw.data(), params_.raw.size()),
                              params_.bins, params_.tail_bound);
}

FlowValue SplineFlow::forward(double z) const {
  if (!std::isfinite(z)) throw DomainError("spline flow: non-finite input");
  const auto [x, ld] = flow_forward(knots_, params_.squash, z);
  return {x, ld};
}

FlowValue SplineFlow::inverse(double x) const {
  if (!in_squash_image(params_.squash, x)) {
    throw DomainError("spline flow: value " + std::to_string(x) + " outside the flow image");
  }
  const auto [z, ld] = flow_inverse(knots_, params_.squash, x);
  return {z, ld};
}

double SplineFlow::log_prob(double x) const {
  const FlowValue inv = inverse(x);
  return log_normal_pdf(inv.value) + inv.logdet;
}

std::vector<double> SplineFlow::sample(std::size_t n, Rng& rng) const {
  std::vector<double> out(n);
  for (auto& v : out) v = flow_forward(knots_, params_.squash, standard_normal(rng)).first;
  return out;
}

FlowValue forward(double z, const SplineFlowParams& params) { return SplineFlow(params).forward(z); }

FlowValue inverse(double x, const SplineFlowParams& params) { return SplineFlow(params).inverse(x); }

double log_prob(double x, const SplineFlowParams& params) { return SplineFlow(params).log_prob(x); }

std::vector<double> sample(const SplineFlowParams& params, std::size_t n, Rng& rng) {
  return SplineFlow(params).sample(n, rng);
}

SplineKnots<ad::Var> record_knots(ad::Tape& tape, const SplineFlowParams& params,
                                  std::vector<ad::Var>& leaves) {
  params.validate();
  leaves = tape.variables(std::span<const double>(params.raw.data(), params.raw.size()));
  return make_knots<ad::Var>(leaves, params.bins, params.tail_bound);
}

SplineKnots<ad::Var> constant_knots(const SplineKnots<double>& kn) {
  SplineKnots<ad::Var> out;
  out.bound = kn.bound;
  out.x.assign(kn.x.begin(), kn.x.end());
  out.y.assign(kn.y.begin(), kn.y.end());
  out.d.assign(kn.d.begin(), kn.d.end());
  return out;
}

ad::Gradient log_prob_gradient(double x, const SplineFlowParams& params) {
  if (!in_squash_image(params.squash, x)) {
    throw DomainError("spline flow: value " + std::to_string(x) + " outside the flow image");
  }
  return ad::grad(
      [&](std::span<const ad::Var> theta) {
        const auto kn = make_knots<ad::Var>(theta, params.bins, params.tail_bound);
        return flow_log_prob(kn, params.squash, ad::Var(x));
      },
      params.raw);
}

}  // namespace elliptic

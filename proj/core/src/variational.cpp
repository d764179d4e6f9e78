#include "elliptic/variational.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

#include "elliptic/autodiff.hpp"
#include "elliptic/diagnostics.hpp"
#include "elliptic/elliptical.hpp"
#include "elliptic/errors.hpp"
#include "elliptic/quadrature.hpp"
#include "elliptic/scalar_math.hpp"

namespace elliptic {

namespace {

constexpr double kVarFloor = 1e-12;

const SplineFlowParams* flow_of(const MixingDistribution& m) {
  const auto* f = std::get_if<FlowMixing>(&m);
  return f ? &f->flow : nullptr;
}

SplineFlowParams* flow_of(MixingDistribution& m) {
  auto* f = std::get_if<FlowMixing>(&m);
  return f ? &f->flow : nullptr;
}

Eigen::VectorXd pack_chol(const Eigen::MatrixXd& l) {
  const Eigen::Index m = l.rows();
  Eigen::VectorXd out(m * (m + 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = j; i < m; ++i) out[k++] = i == j ? std::log(l(i, i)) : l(i, j);
  }
  return out;
}

Eigen::MatrixXd unpack_chol(const Eigen::VectorXd& v, Eigen::Index m) {
  if (v.size() != m * (m + 1) / 2) throw DimensionError("S_chol: packed length does not match M");
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(m, m);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = j; i < m; ++i) l(i, j) = i == j ? std::exp(v[k++]) : v[k++];
  }
  return l;
}

Eigen::VectorXd pack_chol_grad(const Eigen::MatrixXd& lbar, const Eigen::MatrixXd& l) {
  const Eigen::Index m = l.rows();
  Eigen::VectorXd out(m * (m + 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = j; i < m; ++i) out[k++] = i == j ? lbar(i, i) * l(i, i) : lbar(i, j);
  }
  return out;
}

Eigen::MatrixXd unpack_chol_grad(const Eigen::VectorXd& g, const Eigen::MatrixXd& l) {
  const Eigen::Index m = l.rows();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m, m);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = j; i < m; ++i) out(i, j) = i == j ? g[k++] / l(i, i) : g[k++];
  }
  return out;
}

std::size_t block_index(const std::vector<ParamBlock>& blocks, const std::string& name) {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].name == name) return i;
  }
  throw std::logic_error("missing parameter block " + name);
}

// Maps the m and S_chol blocks (values and gradients) to v = L^{-1} m and
// R = L^{-1} S_chol, where L L^T = K_uu.
void whiten_blocks(std::vector<ParamBlock>& blocks, const Eigen::MatrixXd& lk) {
  const auto tri = lk.triangularView<Eigen::Lower>();
  ParamBlock& bm = blocks[block_index(blocks, "m")];
  bm.value = tri.solve(bm.value);
  bm.grad = lk.transpose() * bm.grad;
  ParamBlock& bs = blocks[block_index(blocks, "S_chol")];
  const Eigen::MatrixXd s = unpack_chol(bs.value, lk.rows());
  const Eigen::MatrixXd gs = unpack_chol_grad(bs.grad, s);
  const Eigen::MatrixXd r = tri.solve(s);
  const Eigen::MatrixXd gr = (lk.transpose() * gs).triangularView<Eigen::Lower>();
  bs.value = pack_chol(r);
  bs.grad = pack_chol_grad(gr, r);
}

void unwhiten_blocks(std::vector<ParamBlock>& blocks, const Eigen::MatrixXd& lk) {
  const auto tri = lk.triangularView<Eigen::Lower>();
  ParamBlock& bm = blocks[block_index(blocks, "m")];
  bm.value = tri * bm.value;
  ParamBlock& bs = blocks[block_index(blocks, "S_chol")];
  const Eigen::MatrixXd s = tri * unpack_chol(bs.value, lk.rows());
  bs.value = pack_chol(s);
}

ad::Var sics_log_density(const ScaleInvChiSquare& d, const ad::Var& w) {
  const double half_nu = 0.5 * d.nu;
  return half_nu * std::log(half_nu * d.tau2) - std::lgamma(half_nu) - (half_nu + 1.0) * ad::log(w) -
         (half_nu * d.tau2) / w;
}

// Posterior-mixing quantities of one ELBO evaluation, recorded on a tape so
// their parameter gradients come from a single reverse sweep.
struct MixingPart {
  std::vector<double> xi;
  std::vector<ad::Var> xi_var;  // empty when q(xi) is a point mass
  double inv_mean = 1.0;        // E_q[1 / xi]
  ad::Var inv_mean_var;
  double kl = 0.0;
  ad::Var kl_var;
  std::vector<double> kl_terms;  // per-sample log q - log p
  std::vector<ad::Var> q_leaves;
  std::vector<ad::Var> p_leaves;
  bool recorded = false;
};

MixingPart mixing_part(const ModelSpec& spec, ad::Tape& tape, std::span<const double> xi_base,
                       std::span<const double> kl_base) {
  MixingPart out;
  const auto& post = spec.variational.posterior_mixing;
  if (const auto* d = std::get_if<Dirac>(&post)) {
    out.xi.assign(xi_base.size(), d->s);
    out.inv_mean = 1.0 / d->s;
    return out;
  }
  const SplineFlowParams& qflow = *flow_of(post);
  out.recorded = true;
  const auto qkn = record_knots(tape, qflow, out.q_leaves);
  for (double z : xi_base) {
    const ad::Var x = flow_forward(qkn, qflow.squash, ad::Var(z)).first;
    out.xi_var.push_back(x);
    out.xi.push_back(x.v);
  }
  const auto& quad = BaseQuadrature::standard();
  ad::Var inv(0.0);
  for (std::size_t k = 0; k < quad.size(); ++k) {
    inv = inv + quad.weights()[k] / flow_forward(qkn, qflow.squash, ad::Var(quad.nodes()[k])).first;
  }
  out.inv_mean_var = inv;
  out.inv_mean = inv.v;

  SplineKnots<ad::Var> pkn;
  const SplineFlowParams* pflow = flow_of(spec.prior_mixing);
  if (pflow != nullptr) {
    if (spec.train_prior_mixing) {
      pkn = record_knots(tape, *pflow, out.p_leaves);
    } else {
      pkn = constant_knots(make_knots<double>(std::span<const double>(pflow->raw.data(), pflow->raw.size()),
                                              pflow->bins, pflow->tail_bound));
    }
  }
  ad::Var acc(0.0);
  for (double z : kl_base) {
    const auto [x, ld] = flow_forward(qkn, qflow.squash, ad::Var(z));
    const ad::Var log_q = log_normal_pdf(z) - ld;
    ad::Var log_p;
    if (pflow != nullptr) {
      if (!in_squash_image(pflow->squash, x.v)) {
        throw NumericalError("mixing KL: posterior sample lies outside the prior support");
      }
      log_p = flow_log_prob(pkn, pflow->squash, x);
    } else {
      log_p = sics_log_density(std::get<ScaleInvChiSquare>(spec.prior_mixing), x);
    }
    const ad::Var diff = log_q - log_p;
    out.kl_terms.push_back(diff.v);
    acc = acc + diff;
  }
  if (!kl_base.empty()) {
    out.kl_var = acc / static_cast<double>(kl_base.size());
    out.kl = out.kl_var.v;
  }
  return out;
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, std::span<const Eigen::Index> idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  return out;
}

PredictiveDistribution predict_impl(const ModelSpec& spec, const Eigen::MatrixXd& x_star, int n_xi,
                                    std::uint64_t seed) {
  const LatentMarginals lm = q_f_marginal(spec, x_star);
  PredictiveDistribution out;
  out.mu_f = lm.mu;
  out.var_f = lm.var;
  const auto& post = spec.variational.posterior_mixing;
  std::optional<SplineFlow> qflow;
  if (const auto* d = std::get_if<Dirac>(&post)) {
    out.xi = {d->s};
  } else {
    qflow.emplace(*flow_of(post));
    for (double z : normal_quantile_grid(n_xi)) out.xi.push_back(qflow->forward(z).value);
  }
  const Eigen::Index n = x_star.rows();
  if (is_classification(spec.likelihood)) {
    Rng rng(seed);
    out.class_prob.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double p = 0.0;
      for (int s = 0; s < kClassPredictionSamples; ++s) {
        const double xi = qflow ? qflow->forward(standard_normal(rng)).value : out.xi.front();
        p += sigmoid(out.mu_f[i] + std::sqrt(out.var_f[i] * xi) * standard_normal(rng));
      }
      out.class_prob[i] = p / kClassPredictionSamples;
    }
    return out;
  }
  const bool hetero = std::holds_alternative<HeteroGaussian>(spec.likelihood) ||
                      std::holds_alternative<HeteroElliptical>(spec.likelihood);
  out.noise.reserve(static_cast<std::size_t>(n));
  if (hetero) {
    for (Eigen::Index i = 0; i < n; ++i) {
      out.noise.push_back(noise_nodes(noise_mixing_at(spec.likelihood, x_star.row(i).transpose())));
    }
  } else {
    const NoiseNodes shared =
        noise_nodes(noise_mixing_at(spec.likelihood, Eigen::VectorXd::Zero(x_star.cols())));
    out.noise.assign(static_cast<std::size_t>(n), shared);
  }
  return out;
}

double nll_impl(const ModelSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int n_xi,
                std::uint64_t seed) {
  if (x.rows() != y.size()) throw DimensionError("predictive NLL: X and y lengths differ");
  if (x.rows() == 0) throw DimensionError("predictive NLL: empty test set");
  const PredictiveDistribution pd = predict_impl(spec, x, n_xi, seed);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) acc -= pd.log_density(i, y[i]);
  return acc / static_cast<double>(x.rows());
}

}  // namespace

void ModelSpec::validate(int input_dim) const {
  kernel.validate();
  const auto& v = variational;
  const Eigen::Index m = v.Z.rows();
  if (m < 1) throw DimensionError("model: at least one inducing point is required");
  if (input_dim >= 0 && v.Z.cols() != input_dim) {
    throw DimensionError("model: inducing inputs have " + std::to_string(v.Z.cols()) + " columns, data has " +
                         std::to_string(input_dim));
  }
  const int kd = kernel.input_dim();
  if (kd >= 0 && kd != v.Z.cols()) throw DimensionError("model: kernel dimension does not match the inputs");
  if (v.m.size() != m || v.S_chol.rows() != m || v.S_chol.cols() != m) {
    throw DimensionError("model: variational parameters do not match the inducing count");
  }
  if (!v.Z.allFinite() || !v.m.allFinite() || !v.S_chol.allFinite()) {
    throw DomainError("model: non-finite variational parameters");
  }
  if (!(v.S_chol.diagonal().array() > 0.0).all()) {
    throw DomainError("model: S_chol must have a positive diagonal");
  }
  elliptic::validate(likelihood, static_cast<int>(v.Z.cols()));
  elliptic::validate(prior_mixing);
  elliptic::validate(v.posterior_mixing);
  const bool prior_point = std::holds_alternative<Dirac>(prior_mixing);
  const bool post_point = std::holds_alternative<Dirac>(v.posterior_mixing);
  if (std::holds_alternative<ScaleInvChiSquare>(v.posterior_mixing)) {
    throw ConfigError("model: the posterior mixing must be a point mass or a flow");
  }
  if (prior_point && !post_point) {
    throw ConfigError("model: point-mass prior mixing with a non-point-mass posterior has infinite KL");
  }
  if (!prior_point && post_point) {
    throw ConfigError("model: point-mass posterior mixing with a continuous prior has infinite KL");
  }
  if (prior_point && std::get<Dirac>(prior_mixing).s != std::get<Dirac>(v.posterior_mixing).s) {
    throw ConfigError("model: prior and posterior point masses must coincide");
  }
}

LatentMarginals q_f_marginal(const ModelSpec& spec, const Eigen::MatrixXd& x_star) {
  spec.validate(static_cast<int>(x_star.cols()));
  const auto& v = spec.variational;
  const GramMatrix g = factorize_with_jitter(spec.kernel.gram(v.Z, v.Z), spec.jitter);
  const Eigen::MatrixXd kus = spec.kernel.gram(v.Z, x_star);
  const Eigen::MatrixXd a = g.solve(kus);
  const Eigen::MatrixXd w = v.S_chol.triangularView<Eigen::Lower>().transpose() * a;
  LatentMarginals out;
  out.mu = kus.transpose() * g.solve(v.m);
  out.var = spec.kernel.diag(x_star) - kus.cwiseProduct(a).colwise().sum().transpose() +
            w.cwiseAbs2().colwise().sum().transpose();
  const double worst = out.var.size() > 0 ? out.var.minCoeff() : 0.0;
  if (worst < -1e-8) warn("latent variance " + std::to_string(worst) + " clamped at zero");
  out.var = out.var.cwiseMax(0.0);
  return out;
}

std::pair<double, double> q_f_marginal(const ModelSpec& spec, const Eigen::VectorXd& x_star) {
  const LatentMarginals lm = q_f_marginal(spec, Eigen::MatrixXd(x_star.transpose()));
  return {lm.mu[0], lm.var[0]};
}

KlValue kl_term(const ModelSpec& spec, Rng& rng, int mixing_samples) {
  spec.validate();
  const auto& v = spec.variational;
  ad::Tape tape;
  std::vector<double> kl_base;
  if (!std::holds_alternative<Dirac>(v.posterior_mixing)) {
    kl_base.resize(static_cast<std::size_t>(mixing_samples));
    for (auto& z : kl_base) z = standard_normal(rng);
  }
  const MixingPart mix = mixing_part(spec, tape, {}, kl_base);
  const GramMatrix g = factorize_with_jitter(spec.kernel.gram(v.Z, v.Z), spec.jitter);
  const Eigen::MatrixXd p = g.solve(Eigen::MatrixXd(v.S_chol));
  const double tr = p.cwiseProduct(v.S_chol).sum();
  const double logdet_s = 2.0 * v.S_chol.diagonal().array().log().sum();
  const double mkm = v.m.dot(g.solve(v.m));
  KlValue out;
  out.gaussian = 0.5 * (tr - static_cast<double>(v.m.size()) + g.logdet() - logdet_s + mix.inv_mean * mkm);
  out.mixing = mix.kl;
  if (mix.kl_terms.size() > 1) {
    double ss = 0.0;
    for (double t : mix.kl_terms) ss += (t - mix.kl) * (t - mix.kl);
    const auto n = static_cast<double>(mix.kl_terms.size());
    out.mixing_se = std::sqrt(ss / (n - 1.0) / n);
  }
  return out;
}

ElboNoise draw_elbo_noise(Eigen::Index batch, int n_mc, Rng& rng, int kl_samples) {
  if (n_mc < 1) throw ConfigError("ELBO: at least one Monte-Carlo sample is required");
  ElboNoise noise;
  noise.xi_base.resize(static_cast<std::size_t>(n_mc));
  for (auto& z : noise.xi_base) z = standard_normal(rng);
  noise.eps.resize(batch, n_mc);
  for (Eigen::Index j = 0; j < n_mc; ++j) {
    for (Eigen::Index i = 0; i < batch; ++i) noise.eps(i, j) = standard_normal(rng);
  }
  noise.kl_base.resize(static_cast<std::size_t>(std::max(kl_samples, 0)));
  for (auto& z : noise.kl_base) z = standard_normal(rng);
  return noise;
}

std::vector<ParamBlock> parameter_blocks(const ModelSpec& spec) {
  std::vector<ParamBlock> blocks;
  blocks.emplace_back("kernel", spec.kernel.params());
  if (const Eigen::VectorXd lp = likelihood_params(spec.likelihood); lp.size() > 0) {
    blocks.emplace_back("likelihood", lp);
  }
  if (const auto* pf = flow_of(spec.prior_mixing); pf != nullptr && spec.train_prior_mixing) {
    blocks.emplace_back("prior_mixing", pf->raw);
  }
  if (const auto* qf = flow_of(spec.variational.posterior_mixing)) {
    blocks.emplace_back("posterior_mixing", qf->raw);
  }
  blocks.emplace_back("m", spec.variational.m);
  blocks.emplace_back("S_chol", pack_chol(spec.variational.S_chol));
  if (spec.train_inducing) blocks.emplace_back("Z", spec.variational.Z.reshaped());
  return blocks;
}

void apply_parameter_blocks(ModelSpec& spec, std::span<const ParamBlock> blocks) {
  for (const auto& b : blocks) {
    if (b.name == "kernel") {
      spec.kernel.set_params(b.value);
    } else if (b.name == "likelihood") {
      set_likelihood_params(spec.likelihood, b.value);
    } else if (b.name == "prior_mixing") {
      auto* pf = flow_of(spec.prior_mixing);
      if (pf == nullptr || pf->raw.size() != b.value.size()) throw DimensionError("prior_mixing block mismatch");
      pf->raw = b.value;
    } else if (b.name == "posterior_mixing") {
      auto* qf = flow_of(spec.variational.posterior_mixing);
      if (qf == nullptr || qf->raw.size() != b.value.size()) {
        throw DimensionError("posterior_mixing block mismatch");
      }
      qf->raw = b.value;
    } else if (b.name == "m") {
      if (b.value.size() != spec.variational.m.size()) throw DimensionError("m block mismatch");
      spec.variational.m = b.value;
    } else if (b.name == "S_chol") {
      spec.variational.S_chol = unpack_chol(b.value, spec.variational.m.size());
    } else if (b.name == "Z") {
      if (b.value.size() != spec.variational.Z.size()) throw DimensionError("Z block mismatch");
      spec.variational.Z.reshaped() = b.value;
    } else {
      throw ConfigError("unknown parameter block '" + b.name + "'");
    }
  }
}

ElboGradient elbo_gradient(const ModelSpec& spec, const Eigen::MatrixXd& xb, const Eigen::VectorXd& yb,
                           double full_n, const ElboNoise& noise) {
  spec.validate(static_cast<int>(xb.cols()));
  const Eigen::Index nb = xb.rows();
  if (nb == 0) throw DimensionError("ELBO: empty batch");
  if (yb.size() != nb) throw DimensionError("ELBO: X and y lengths differ");
  const auto n_mc = static_cast<Eigen::Index>(noise.xi_base.size());
  if (n_mc < 1 || noise.eps.rows() != nb || noise.eps.cols() != n_mc) {
    throw DimensionError("ELBO: noise draws do not match the batch");
  }
  const auto& vs = spec.variational;
  const Eigen::Index m = vs.Z.rows();
  const Kernel& kernel = spec.kernel;

  // latent marginals
  const Eigen::MatrixXd kuu = kernel.gram(vs.Z, vs.Z);
  const GramMatrix g = factorize_with_jitter(kuu, spec.jitter);
  const Eigen::MatrixXd kuf = kernel.gram(vs.Z, xb);
  const Eigen::VectorXd kdiag = kernel.diag(xb);
  const Eigen::MatrixXd a = g.solve(kuf);
  const Eigen::VectorXd alpha = g.solve(vs.m);
  const Eigen::MatrixXd ls = vs.S_chol.triangularView<Eigen::Lower>();
  const Eigen::MatrixXd w = ls.triangularView<Eigen::Lower>().transpose() * a;
  const Eigen::VectorXd mu = kuf.transpose() * alpha;
  const Eigen::VectorXd var_raw =
      kdiag - kuf.cwiseProduct(a).colwise().sum().transpose() + w.cwiseAbs2().colwise().sum().transpose();
  const Eigen::VectorXd var = var_raw.cwiseMax(kVarFloor);

  ad::Tape tape;
  MixingPart mix = mixing_part(spec, tape, noise.xi_base, noise.kl_base);
  const double scale = full_n / static_cast<double>(nb);
  const double wmc = scale / static_cast<double>(n_mc);

  Eigen::VectorXd g_mu = Eigen::VectorXd::Zero(nb);
  Eigen::VectorXd g_var = Eigen::VectorXd::Zero(nb);
  std::vector<double> g_xi(static_cast<std::size_t>(n_mc), 0.0);
  Eigen::VectorXd g_lik;
  std::vector<std::pair<ad::Var, double>> seeds;
  std::vector<ad::Var> lik_leaves;
  double ell = 0.0;

  // Reparameterized latent sample f = mu + sqrt(var xi) eps; accumulates the
  // chain rule for an adjoint gf on f.
  const auto chain_f = [&](Eigen::Index i, Eigen::Index j, double gf) {
    const double sxi = std::sqrt(mix.xi[static_cast<std::size_t>(j)]);
    const double sv = std::sqrt(var[i]);
    const double e = noise.eps(i, j);
    g_mu[i] += gf;
    g_var[i] += gf * e * sxi / (2.0 * sv);
    g_xi[static_cast<std::size_t>(j)] += gf * e * sv / (2.0 * sxi);
  };
  const auto latent = [&](Eigen::Index i, Eigen::Index j) {
    return mu[i] + std::sqrt(var[i] * mix.xi[static_cast<std::size_t>(j)]) * noise.eps(i, j);
  };
  const double xbar =
      std::accumulate(mix.xi.begin(), mix.xi.end(), 0.0) / static_cast<double>(n_mc);

  std::visit(
      Overloaded{
          [&](const GaussianLik& lik) {
            // E[log N(y; f, s2)] is analytic in f
            const double s2 = std::exp(lik.log_variance);
            double g_lv = 0.0;
            double sum_var = 0.0;
            for (Eigen::Index i = 0; i < nb; ++i) {
              const double r = yb[i] - mu[i];
              const double q = r * r + var[i] * xbar;
              ell += scale * (-0.5 * (kLog2Pi + lik.log_variance) - 0.5 * q / s2);
              g_mu[i] += scale * r / s2;
              g_var[i] -= scale * 0.5 * xbar / s2;
              g_lv += scale * (-0.5 + 0.5 * q / s2);
              sum_var += var[i];
            }
            for (auto& gx : g_xi) gx -= scale * 0.5 * sum_var / s2 / static_cast<double>(n_mc);
            g_lik = Eigen::VectorXd::Constant(1, g_lv);
          },
          [&](const HeteroGaussian& lik) {
            MLPCache cache;
            const Eigen::MatrixXd out = mlp_forward_batch(lik.net, xb, &cache);
            Eigen::MatrixXd gout(nb, 1);
            double sum_ratio = 0.0;
            for (Eigen::Index i = 0; i < nb; ++i) {
              const double s2 = softplus(out(i, 0)) + kHeteroVarianceFloor;
              const double r = yb[i] - mu[i];
              const double q = r * r + var[i] * xbar;
              ell += scale * (-0.5 * (kLog2Pi + std::log(s2)) - 0.5 * q / s2);
              g_mu[i] += scale * r / s2;
              g_var[i] -= scale * 0.5 * xbar / s2;
              gout(i, 0) = scale * (-0.5 / s2 + 0.5 * q / (s2 * s2)) * sigmoid(out(i, 0));
              sum_ratio += var[i] / s2;
            }
            for (auto& gx : g_xi) gx -= scale * 0.5 * sum_ratio / static_cast<double>(n_mc);
            g_lik = mlp_backward(lik.net, cache, gout);
          },
          [&](const EllipticalNoise& lik) {
            NoiseNodes nodes;
            std::vector<ad::Var> omega;
            const auto* flow = std::get_if<FlowMixing>(&lik.mixing);
            if (flow != nullptr) {
              const auto& quad = BaseQuadrature::standard();
              const auto kn = record_knots(tape, flow->flow, lik_leaves);
              nodes.log_weight.assign(quad.log_weights().begin(), quad.log_weights().end());
              for (double z : quad.nodes()) {
                omega.push_back(flow_forward(kn, flow->flow.squash, ad::Var(z)).first);
                nodes.omega.push_back(omega.back().v);
              }
            } else {
              nodes = noise_nodes(lik.mixing);
            }
            std::vector<double> adj(nodes.omega.size(), 0.0);
            const std::span<double> adj_span = flow != nullptr ? std::span<double>(adj) : std::span<double>();
            for (Eigen::Index i = 0; i < nb; ++i) {
              for (Eigen::Index j = 0; j < n_mc; ++j) {
                double dr = 0.0;
                ell += wmc * noise_log_lik(nodes, yb[i] - latent(i, j), 0.0, wmc, adj_span, &dr);
                chain_f(i, j, -dr * wmc);
              }
            }
            for (std::size_t k = 0; k < omega.size(); ++k) seeds.emplace_back(omega[k], adj[k]);
          },
          [&](const HeteroElliptical& lik) {
            MLPCache cache;
            const Eigen::MatrixXd raw = mlp_forward_batch(lik.net, xb, &cache);
            Eigen::MatrixXd graw(nb, raw.cols());
            const auto& quad = BaseQuadrature::standard();
            NoiseNodes nodes;
            nodes.log_weight.assign(quad.log_weights().begin(), quad.log_weights().end());
            nodes.omega.resize(quad.size());
            std::vector<double> adj(quad.size());
            std::vector<ad::Var> omega(quad.size());
            std::vector<std::pair<ad::Var, double>> local_seeds(quad.size());
            ad::Tape local;
            for (Eigen::Index i = 0; i < nb; ++i) {
              local.clear();
              const Eigen::VectorXd row = raw.row(i).transpose();
              const auto leaves = local.variables(std::span<const double>(row.data(), row.size()));
              const auto kn = make_knots<ad::Var>(leaves, lik.bins, lik.tail_bound);
              for (std::size_t k = 0; k < quad.size(); ++k) {
                omega[k] = flow_forward(kn, Squash::softplus(), ad::Var(quad.nodes()[k])).first;
                nodes.omega[k] = omega[k].v;
              }
              std::fill(adj.begin(), adj.end(), 0.0);
              for (Eigen::Index j = 0; j < n_mc; ++j) {
                double dr = 0.0;
                ell += wmc * noise_log_lik(nodes, yb[i] - latent(i, j), 0.0, wmc, adj, &dr);
                chain_f(i, j, -dr * wmc);
              }
              for (std::size_t k = 0; k < quad.size(); ++k) local_seeds[k] = {omega[k], adj[k]};
              const auto grads = local.backward(local_seeds);
              for (std::size_t p = 0; p < leaves.size(); ++p) {
                graw(i, static_cast<Eigen::Index>(p)) = grads[static_cast<std::size_t>(leaves[p].id)];
              }
            }
            g_lik = mlp_backward(lik.net, cache, graw);
          },
          [&](const BernoulliSigmoid&) {
            for (Eigen::Index i = 0; i < nb; ++i) {
              if (yb[i] != 0.0 && yb[i] != 1.0) throw DomainError("bernoulli likelihood: labels must be 0 or 1");
              for (Eigen::Index j = 0; j < n_mc; ++j) {
                const double f = latent(i, j);
                ell += wmc * (yb[i] == 1.0 ? log_sigmoid(f) : log_sigmoid(-f));
                chain_f(i, j, wmc * (yb[i] - sigmoid(f)));
              }
            }
          },
      },
      spec.likelihood);

  for (Eigen::Index i = 0; i < nb; ++i) {
    if (var_raw[i] < kVarFloor) g_var[i] = 0.0;
  }

  // Gaussian KL
  const Eigen::MatrixXd p = g.solve(ls);
  const double tr = p.cwiseProduct(ls).sum();
  const double logdet_s = 2.0 * ls.diagonal().array().log().sum();
  const double mkm = vs.m.dot(alpha);
  const double c = mix.inv_mean;
  const double kl_g = 0.5 * (tr - static_cast<double>(m) + g.logdet() - logdet_s + c * mkm);

  ElboGradient out;
  out.value.expected_loglik = ell;
  out.value.kl_gaussian = kl_g;
  out.value.kl_mixing = mix.kl;
  out.value.value = ell - kl_g - mix.kl;
  if (!std::isfinite(out.value.value)) {
    std::ostringstream msg;
    msg << "ELBO is not finite (expected log-likelihood " << ell << ", Gaussian KL " << kl_g << ", mixing KL "
        << mix.kl << ")";
    throw NumericalError(msg.str());
  }

  // adjoints of the ELBO
  const Eigen::MatrixXd kinv = g.inverse();
  const Eigen::MatrixXd kinv_s = p * ls.triangularView<Eigen::Lower>().transpose();
  Eigen::MatrixXd kbar = 0.5 * (p * p.transpose() - kinv + c * alpha * alpha.transpose());
  Eigen::MatrixXd lbar = -p;
  lbar.diagonal().array() += ls.diagonal().array().inverse();
  Eigen::VectorXd mbar = -c * alpha;
  const double cbar = -0.5 * mkm;

  const Eigen::VectorXd a_gmu = a * g_mu;
  mbar += a_gmu;
  const Eigen::MatrixXd bc = a * g_var.asDiagonal() * a.transpose();
  lbar += 2.0 * bc * ls.triangularView<Eigen::Lower>();
  const Eigen::MatrixXd kinv_s_bc = kinv_s * bc;
  kbar += -a_gmu * alpha.transpose() + bc - kinv_s_bc - kinv_s_bc.transpose();
  kbar = 0.5 * (kbar + kbar.transpose()).eval();
  if (g.jitter() > 0.0) {
    // the jitter is proportional to the mean diagonal of K_uu
    const double level = g.jitter() / kuu.diagonal().mean();
    kbar.diagonal().array() += level * kbar.trace() / static_cast<double>(m);
  }
  const Eigen::MatrixXd kufbar =
      alpha * g_mu.transpose() + 2.0 * (kinv_s * a - a) * g_var.asDiagonal();

  // one reverse sweep for all flow parameters
  std::vector<double> adjoints;
  if (tape.size() > 0) {
    if (mix.recorded) {
      for (std::size_t j = 0; j < mix.xi_var.size(); ++j) seeds.emplace_back(mix.xi_var[j], g_xi[j]);
      seeds.emplace_back(mix.inv_mean_var, cbar);
      if (!noise.kl_base.empty()) seeds.emplace_back(mix.kl_var, -1.0);
    }
    adjoints = tape.backward(seeds);
  }
  const auto leaf_grad = [&](const std::vector<ad::Var>& leaves) {
    Eigen::VectorXd gr(static_cast<Eigen::Index>(leaves.size()));
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      gr[static_cast<Eigen::Index>(i)] = adjoints[static_cast<std::size_t>(leaves[i].id)];
    }
    return gr;
  };

  out.blocks = parameter_blocks(spec);
  for (auto& b : out.blocks) {
    if (b.name == "kernel") {
      b.grad = kernel.grad_params(vs.Z, vs.Z, kbar) + kernel.grad_params(vs.Z, xb, kufbar) +
               kernel.grad_params_diag(xb, g_var);
    } else if (b.name == "likelihood") {
      b.grad = std::holds_alternative<EllipticalNoise>(spec.likelihood) ? leaf_grad(lik_leaves) : g_lik;
    } else if (b.name == "prior_mixing") {
      b.grad = leaf_grad(mix.p_leaves);
    } else if (b.name == "posterior_mixing") {
      b.grad = leaf_grad(mix.q_leaves);
    } else if (b.name == "m") {
      b.grad = mbar;
    } else if (b.name == "S_chol") {
      b.grad = pack_chol_grad(lbar, ls);
    } else if (b.name == "Z") {
      const Eigen::MatrixXd gz = 2.0 * kernel.grad_x1(vs.Z, vs.Z, kbar) + kernel.grad_x1(vs.Z, xb, kufbar);
      b.grad = gz.reshaped();
    }
  }
  return out;
}

ElboValue elbo(const ModelSpec& spec, const Eigen::MatrixXd& xb, const Eigen::VectorXd& yb, double full_n,
               const ElboNoise& noise) {
  return elbo_gradient(spec, xb, yb, full_n, noise).value;
}

ElboValue elbo(const ModelSpec& spec, const Eigen::MatrixXd& xb, const Eigen::VectorXd& yb, double full_n,
               int n_mc, Rng& rng) {
  return elbo(spec, xb, yb, full_n, draw_elbo_noise(xb.rows(), n_mc, rng));
}

TrainResult train(ModelSpec spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                  const Eigen::MatrixXd& x_val, const Eigen::VectorXd& y_val, const TrainConfig& config,
                  Rng& rng) {
  spec.validate(static_cast<int>(x.cols()));
  if (x.rows() != y.size()) throw DimensionError("train: X and y lengths differ");
  if (x.rows() == 0) throw DimensionError("train: empty training set");
  if (spec.variational.Z.rows() > x.rows()) throw ConfigError("train: more inducing points than data");
  if (config.early_stopping && x_val.rows() == 0) {
    throw ConfigError("train: early stopping needs a nonempty validation split");
  }
  if (x_val.rows() != y_val.size()) throw DimensionError("train: validation X and y lengths differ");
  if (config.epochs < 1) throw ConfigError("train: epoch count must be positive");
  const int n_mc = config.n_mc > 0 ? config.n_mc : (is_classification(spec.likelihood) ? 1 : 16);

  const Eigen::Index n = x.rows();
  const Eigen::Index bs = config.batch_size <= 0 || config.batch_size >= n ? n : config.batch_size;
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});

  Adam adam(AdamConfig{.lr = config.lr});
  std::vector<ParamBlock> blocks = parameter_blocks(spec);
  TrainResult result;
  result.model = spec;
  result.best_val_nll = std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (bs < n) std::shuffle(perm.begin(), perm.end(), rng);
    double elbo_sum = 0.0;
    int batches = 0;
    for (Eigen::Index start = 0; start < n; start += bs) {
      const Eigen::Index len = std::min(bs, n - start);
      const std::span<const Eigen::Index> idx(perm.data() + start, static_cast<std::size_t>(len));
      const Eigen::MatrixXd xb = bs < n ? take_rows(x, idx) : x;
      Eigen::VectorXd yb(len);
      for (Eigen::Index i = 0; i < len; ++i) yb[i] = y[idx[static_cast<std::size_t>(i)]];
      const ElboNoise noise = draw_elbo_noise(len, n_mc, rng, config.kl_samples);
      const ElboGradient eg = elbo_gradient(spec, xb, yb, static_cast<double>(n), noise);
      for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].grad = -eg.blocks[b].grad;
      // Adam moves m and S_chol in K_uu-whitened coordinates; the stored
      // parameters remain the unwhitened ones.
      const Eigen::MatrixXd lk = gram_with_jitter(spec.kernel, spec.variational.Z, spec.jitter).chol();
      whiten_blocks(blocks, lk);
      adam.step(blocks);
      unwhiten_blocks(blocks, lk);
      apply_parameter_blocks(spec, blocks);
      elbo_sum += eg.value.value;
      ++batches;
    }
    TraceRow row{epoch, elbo_sum / batches, std::numeric_limits<double>::quiet_NaN()};
    if (x_val.rows() > 0) row.val_nll = nll_impl(spec, x_val, y_val, config.val_xi, 0);
    result.trace.push_back(row);
    if (config.early_stopping) {
      if (row.val_nll < result.best_val_nll) {
        result.best_val_nll = row.val_nll;
        result.best_epoch = epoch;
        result.model = spec;
      } else if (config.patience > 0 && epoch - result.best_epoch >= config.patience) {
        break;
      }
    }
  }
  if (!config.early_stopping || result.best_epoch < 0) {
    result.model = spec;
    result.best_epoch = result.trace.back().epoch;
    result.best_val_nll = result.trace.back().val_nll;
  }
  result.model.trained = true;
  return result;
}

double PredictiveDistribution::latent_variance(Eigen::Index i) const {
  const double mean_xi = std::accumulate(xi.begin(), xi.end(), 0.0) / static_cast<double>(xi.size());
  return mean_xi * var_f[i];
}

double PredictiveDistribution::latent_halfwidth(Eigen::Index i, double target) const {
  if (var_f[i] <= 0.0) return 0.0;
  std::vector<double> scaled(xi.size());
  for (std::size_t j = 0; j < xi.size(); ++j) scaled[j] = var_f[i] * xi[j];
  return credible_halfwidth(scaled, target);
}

double PredictiveDistribution::log_density(Eigen::Index i, double y) const {
  if (classification()) {
    const double p = std::clamp(class_prob[i], 1e-300, 1.0);
    const double q = std::clamp(1.0 - class_prob[i], 1e-300, 1.0);
    if (y == 1.0) return std::log(p);
    if (y == 0.0) return std::log(q);
    throw DomainError("class labels must be 0 or 1");
  }
  std::vector<double> terms(xi.size());
  for (std::size_t j = 0; j < xi.size(); ++j) {
    terms[j] = noise_log_lik(noise[static_cast<std::size_t>(i)], y - mu_f[i], var_f[i] * xi[j]);
  }
  return logsumexp(terms) - std::log(static_cast<double>(xi.size()));
}

PredictiveDistribution predict(const ModelSpec& spec, const Eigen::MatrixXd& x_star, int n_xi,
                               std::uint64_t seed) {
  if (!spec.trained) throw ConfigError("predict: the model has not been trained");
  return predict_impl(spec, x_star, n_xi, seed);
}

double predictive_nll(const ModelSpec& spec, const Eigen::MatrixXd& x_test, const Eigen::VectorXd& y_test,
                      int n_xi, std::uint64_t seed) {
  if (!spec.trained) throw ConfigError("predictive NLL: the model has not been trained");
  return nll_impl(spec, x_test, y_test, n_xi, seed);
}

}  // namespace elliptic

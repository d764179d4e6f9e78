#include "elliptic/models.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include "elliptic/errors.hpp"
#include "elliptic/scalar_math.hpp"

namespace elliptic {

ModelKind parse_model_kind(const std::string& name) {
  if (name == "exact-gp") return ModelKind::ExactGP;
  if (name == "svgp") return ModelKind::SVGP;
  if (name == "ep-gp") return ModelKind::EPGP;
  if (name == "ep-ep") return ModelKind::EPEP;
  if (name == "het-gp") return ModelKind::HetGP;
  if (name == "het-ep") return ModelKind::HetEP;
  throw ConfigError("unknown model '" + name + "'");
}

const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::ExactGP:
      return "exact-gp";
    case ModelKind::SVGP:
      return "svgp";
    case ModelKind::EPGP:
      return "ep-gp";
    case ModelKind::EPEP:
      return "ep-ep";
    case ModelKind::HetGP:
      return "het-gp";
    case ModelKind::HetEP:
      return "het-ep";
  }
  return "?";
}

Kernel parse_kernel(const std::string& spec, int dims) {
  std::vector<Kernel> parts;
  std::istringstream in(spec);
  std::string tok;
  while (std::getline(in, tok, '+')) {
    if (tok == "se") {
      parts.push_back(Kernel::se_ard(dims));
    } else if (tok == "periodic") {
      parts.push_back(Kernel::periodic(1.0, 1.0, 1.0));
    } else if (tok == "linear") {
      parts.push_back(Kernel::linear(0.1));
    } else {
      throw ConfigError("unknown kernel component '" + tok + "' (expected se, periodic or linear)");
    }
  }
  if (parts.empty()) throw ConfigError("empty kernel string");
  if (parts.size() == 1) return parts.front();
  return Kernel::sum(std::move(parts));
}

Eigen::MatrixXd select_inducing(const Eigen::MatrixXd& x, int m, Rng& rng) {
  const Eigen::Index n = x.rows();
  if (m < 1) throw ConfigError("inducing count must be positive");
  if (m >= n) return x;
  std::vector<Eigen::Index> chosen;
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  chosen.push_back(first(rng));
  Eigen::VectorXd d2 = (x.rowwise() - x.row(chosen.back())).rowwise().squaredNorm();
  while (static_cast<int>(chosen.size()) < m) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      for (pick = 0; pick < n - 1; ++pick) {
        r -= d2[pick];
        if (r <= 0.0) break;
      }
    } else {
      std::uniform_int_distribution<Eigen::Index> any(0, n - 1);
      pick = any(rng);
    }
    chosen.push_back(pick);
    d2 = d2.cwiseMin((x.rowwise() - x.row(pick)).rowwise().squaredNorm());
  }
  Eigen::MatrixXd z(m, x.cols());
  for (int i = 0; i < m; ++i) z.row(i) = x.row(chosen[static_cast<std::size_t>(i)]);
  return z;
}

ModelSpec make_model(ModelKind kind, Kernel kernel, const Eigen::MatrixXd& x, const ModelOptions& options,
                     Rng& rng) {
  if (kind == ModelKind::ExactGP) throw ConfigError("the exact GP is not a variational model");
  if (options.classification && kind != ModelKind::SVGP && kind != ModelKind::EPEP) {
    throw ConfigError(std::string("model '") + to_string(kind) + "' does not support classification");
  }
  const int d = static_cast<int>(x.cols());
  ModelSpec spec;
  spec.kernel = std::move(kernel);
  spec.train_inducing = options.train_inducing;
  const int m = static_cast<int>(std::min<Eigen::Index>(options.inducing, x.rows()));
  spec.variational.Z = select_inducing(x, m, rng);
  spec.variational.m = Eigen::VectorXd::Zero(m);
  spec.variational.S_chol = gram_with_jitter(spec.kernel, spec.variational.Z, spec.jitter).chol();

  const Squash post_squash = Squash::scaled_sigmoid(options.posterior_max);
  switch (kind) {
    case ModelKind::SVGP:
      spec.likelihood = GaussianLik{std::log(options.init_noise)};
      break;
    case ModelKind::EPGP:
      spec.likelihood = EllipticalNoise{FlowMixing{SplineFlowParams::identity(options.noise_bins, Squash::softplus())}};
      break;
    case ModelKind::EPEP:
      spec.likelihood = EllipticalNoise{FlowMixing{SplineFlowParams::identity(options.noise_bins, Squash::softplus())}};
      spec.prior_mixing = FlowMixing{SplineFlowParams::identity(options.prior_bins, post_squash)};
      spec.variational.posterior_mixing = FlowMixing{SplineFlowParams::identity(options.posterior_bins, post_squash)};
      break;
    case ModelKind::HetGP: {
      HeteroGaussian lik{MLPParams::init(d, 1, rng, options.hidden)};
      lik.net.biases.back()[0] = softplus_inverse(options.init_noise);
      spec.likelihood = std::move(lik);
      break;
    }
    case ModelKind::HetEP:
      spec.likelihood =
          HeteroElliptical{MLPParams::init(d, SplineFlowParams::param_count(options.noise_bins), rng, options.hidden),
                           options.noise_bins, kDefaultTailBound};
      break;
    case ModelKind::ExactGP:
      break;
  }
  if (options.classification) spec.likelihood = BernoulliSigmoid{};
  spec.validate(d);
  return spec;
}

}  // namespace elliptic

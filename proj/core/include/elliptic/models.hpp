#pragma once

// Ready-made model configurations: exact GP, sparse variational GP, and the
// elliptical variants with elliptical likelihood, prior/posterior and
// heteroscedastic noise.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "elliptic/kernels.hpp"
#include "elliptic/random.hpp"
#include "elliptic/variational.hpp"

namespace elliptic {

enum class ModelKind { ExactGP, SVGP, EPGP, EPEP, HetGP, HetEP };

ModelKind parse_model_kind(const std::string& name);
const char* to_string(ModelKind kind);

/// Parses "se", "periodic", "linear" or sums such as "periodic+linear+se".
Kernel parse_kernel(const std::string& spec, int dims);

struct ModelOptions {
  int inducing = 500;  // M = min(N, inducing)
  int noise_bins = 9;
  int posterior_bins = 5;
  double posterior_max = 3.0;
  int prior_bins = 5;
  std::vector<int> hidden = {128, 128};
  bool classification = false;
  bool train_inducing = false;
  double init_noise = 0.1;
};

/// M rows of x chosen by k-means++ seeding (all rows when M >= N).
Eigen::MatrixXd select_inducing(const Eigen::MatrixXd& x, int m, Rng& rng);

/// Variational model of the given kind with m = 0 and S = K_uu, so q(u) starts
/// at the prior. Throws ConfigError for ExactGP and for kinds that do not
/// support classification.
ModelSpec make_model(ModelKind kind, Kernel kernel, const Eigen::MatrixXd& x, const ModelOptions& options,
                     Rng& rng);

}  // namespace elliptic

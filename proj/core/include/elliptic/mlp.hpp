#pragma once

// Small fully connected network used to amortize noise parameters over inputs.

#include <vector>

#include <Eigen/Dense>

#include "elliptic/random.hpp"

namespace elliptic {

enum class Activation { Tanh, Identity };

struct MLPParams {
  std::vector<Eigen::MatrixXd> weights;  // weights[l] is out_l x in_l
  std::vector<Eigen::VectorXd> biases;
  Activation activation = Activation::Tanh;

  /// input -> hidden -> ... -> output, hidden layers activated.
  /// Weights are drawn N(0, 1/fan_in); the output layer is scaled by
  /// `output_scale`; all biases start at zero.
  static MLPParams init(int input_dim, int output_dim, Rng& rng, std::vector<int> hidden = {128, 128},
                        double output_scale = 0.1);
  static MLPParams zeros(int input_dim, int output_dim, std::vector<int> hidden = {128, 128});

  [[nodiscard]] int input_dim() const;
  [[nodiscard]] int output_dim() const;
  [[nodiscard]] Eigen::Index num_params() const;
  [[nodiscard]] Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& theta);
  /// Throws DimensionError on an inconsistent shape chain, DomainError on non-finite values.
  void validate() const;
};

/// Intermediate activations of a batch forward pass.
struct MLPCache {
  std::vector<Eigen::MatrixXd> inputs;  // inputs[l] is the N x in_l input to layer l
};

Eigen::VectorXd mlp_forward(const MLPParams& net, const Eigen::VectorXd& x);

/// Rows of x are inputs; returns N x output_dim.
Eigen::MatrixXd mlp_forward_batch(const MLPParams& net, const Eigen::MatrixXd& x,
                                  MLPCache* cache = nullptr);

/// Gradient of sum_{n,k} G_nk out_nk with respect to the flattened parameters.
Eigen::VectorXd mlp_backward(const MLPParams& net, const MLPCache& cache, const Eigen::MatrixXd& g);

/// d out / d x at a single input (output_dim x input_dim).
Eigen::MatrixXd mlp_jacobian(const MLPParams& net, const Eigen::VectorXd& x);

}  // namespace elliptic

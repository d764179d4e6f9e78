#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace elliptic {

/// A named group of unconstrained parameters and its gradient.
struct ParamBlock {
  std::string name;
  Eigen::VectorXd value;
  Eigen::VectorXd grad;

  ParamBlock() = default;
  ParamBlock(std::string n, Eigen::VectorXd v)
      : name(std::move(n)), value(std::move(v)), grad(Eigen::VectorXd::Zero(value.size())) {}
};

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam for minimization. Moment estimates are kept per block and the block
/// layout is fixed by the first call to step().
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// One descent step using each block's `grad`. Throws DimensionError if
  /// the block layout changed and NumericalError on non-finite gradients.
  void step(std::span<ParamBlock> blocks);
  /// Flat-vector variant.
  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad);

  void set_lr(double lr) { config_.lr = lr; }
  [[nodiscard]] const AdamConfig& config() const { return config_; }
  [[nodiscard]] long iterations() const { return t_; }
  void reset();

 private:
  void ensure_layout(std::span<const Eigen::Index> sizes);

  AdamConfig config_;
  long t_ = 0;
  std::vector<Eigen::VectorXd> m_;
  std::vector<Eigen::VectorXd> v_;
};

/// Concatenation of block values / gradients in order.
Eigen::VectorXd flatten_values(std::span<const ParamBlock> blocks);
Eigen::VectorXd flatten_grads(std::span<const ParamBlock> blocks);
/// Inverse of flatten_values.
void assign_values(std::span<ParamBlock> blocks, const Eigen::VectorXd& flat);

}  // namespace elliptic

#include "elliptic/adam.hpp"

#include <cmath>

#include "elliptic/errors.hpp"

namespace elliptic {

void Adam::reset() {
  t_ = 0;
  m_.clear();
  v_.clear();
}

void Adam::ensure_layout(std::span<const Eigen::Index> sizes) {
  if (m_.empty()) {
    for (auto n : sizes) {
      m_.push_back(Eigen::VectorXd::Zero(n));
      v_.push_back(Eigen::VectorXd::Zero(n));
    }
    return;
  }
  if (m_.size() != sizes.size()) throw DimensionError("adam: block count changed between steps");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (m_[i].size() != sizes[i]) throw DimensionError("adam: block size changed between steps");
  }
}

void Adam::step(std::span<ParamBlock> blocks) {
  std::vector<Eigen::Index> sizes;
  for (const auto& b : blocks) {
    if (b.grad.size() != b.value.size()) {
      throw DimensionError("adam: block '" + b.name + "' has mismatched value and gradient");
    }
    if (!b.grad.allFinite()) throw NumericalError("adam: non-finite gradient in block '" + b.name + "'");
    sizes.push_back(b.value.size());
  }
  ensure_layout(sizes);
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto& b = blocks[i];
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * b.grad;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * b.grad.cwiseAbs2();
    b.value.array() -= config_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.eps);
  }
}

void Adam::step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
  ParamBlock b("theta", theta);
  b.grad = grad;
  std::span<ParamBlock> one(&b, 1);
  step(one);
  theta.swap(b.value);
}

Eigen::VectorXd flatten_values(std::span<const ParamBlock> blocks) {
  Eigen::Index n = 0;
  for (const auto& b : blocks) n += b.value.size();
  Eigen::VectorXd out(n);
  Eigen::Index off = 0;
  for (const auto& b : blocks) {
    out.segment(off, b.value.size()) = b.value;
    off += b.value.size();
  }
  return out;
}

Eigen::VectorXd flatten_grads(std::span<const ParamBlock> blocks) {
  Eigen::Index n = 0;
  for (const auto& b : blocks) n += b.grad.size();
  Eigen::VectorXd out(n);
  Eigen::Index off = 0;
  for (const auto& b : blocks) {
    out.segment(off, b.grad.size()) = b.grad;
    off += b.grad.size();
  }
  return out;
}

void assign_values(std::span<ParamBlock> blocks, const Eigen::VectorXd& flat) {
  Eigen::Index off = 0;
  for (auto& b : blocks) {
    if (off + b.value.size() > flat.size()) throw DimensionError("assign_values: flat vector too short");
    b.value = flat.segment(off, b.value.size());
    off += b.value.size();
  }
  if (off != flat.size()) throw DimensionError("assign_values: flat vector too long");
}

}  // namespace elliptic

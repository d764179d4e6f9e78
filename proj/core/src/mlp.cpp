#include "elliptic/mlp.hpp"

#include <cmath>
#include <string>

#include "elliptic/errors.hpp"

namespace elliptic {

namespace {

std::vector<int> layer_sizes(int in, int out, const std::vector<int>& hidden) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

}  // namespace

MLPParams MLPParams::init(int input_dim, int output_dim, Rng& rng, std::vector<int> hidden,
                          double output_scale) {
  MLPParams net = zeros(input_dim, output_dim, std::move(hidden));
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    auto& w = net.weights[l];
    double sd = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    if (l + 1 == net.weights.size()) sd *= output_scale;
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = sd * standard_normal(rng);
    }
  }
  return net;
}

MLPParams MLPParams::zeros(int input_dim, int output_dim, std::vector<int> hidden) {
  if (input_dim < 1 || output_dim < 1) throw DimensionError("mlp: dimensions must be positive");
  MLPParams net;
  const auto s = layer_sizes(input_dim, output_dim, hidden);
  for (std::size_t l = 0; l + 1 < s.size(); ++l) {
    if (s[l + 1] < 1) throw DimensionError("mlp: hidden widths must be positive");
    net.weights.push_back(Eigen::MatrixXd::Zero(s[l + 1], s[l]));
    net.biases.push_back(Eigen::VectorXd::Zero(s[l + 1]));
  }
  return net;
}

int MLPParams::input_dim() const { return weights.empty() ? 0 : static_cast<int>(weights.front().cols()); }
int MLPParams::output_dim() const { return weights.empty() ? 0 : static_cast<int>(weights.back().rows()); }

Eigen::Index MLPParams::num_params() const {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

Eigen::VectorXd MLPParams::flatten() const {
  Eigen::VectorXd out(num_params());
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.segment(off, weights[l].size()) = weights[l].reshaped();
    off += weights[l].size();
    out.segment(off, biases[l].size()) = biases[l];
    off += biases[l].size();
  }
  return out;
}

void MLPParams::unflatten(const Eigen::VectorXd& theta) {
  if (theta.size() != num_params()) {
    throw DimensionError("mlp: expected " + std::to_string(num_params()) + " parameters, got " +
                         std::to_string(theta.size()));
  }
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l].reshaped() = theta.segment(off, weights[l].size());
    off += weights[l].size();
    biases[l] = theta.segment(off, biases[l].size());
    off += biases[l].size();
  }
}

void MLPParams::validate() const {
  if (weights.empty() || weights.size() != biases.size()) throw DimensionError("mlp: malformed layer list");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (biases[l].size() != weights[l].rows()) throw DimensionError("mlp: bias length mismatch");
    if (l > 0 && weights[l].cols() != weights[l - 1].rows()) throw DimensionError("mlp: shape chain broken");
    if (!weights[l].allFinite() || !biases[l].allFinite()) throw DomainError("mlp: non-finite parameters");
  }
}

Eigen::MatrixXd mlp_forward_batch(const MLPParams& net, const Eigen::MatrixXd& x, MLPCache* cache) {
  net.validate();
  if (x.cols() != net.input_dim()) {
    throw DimensionError("mlp: expected " + std::to_string(net.input_dim()) + " inputs, got " +
                         std::to_string(x.cols()));
  }
  if (cache) cache->inputs.clear();
  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    if (cache) cache->inputs.push_back(h);
    Eigen::MatrixXd a = h * net.weights[l].transpose();
    a.rowwise() += net.biases[l].transpose();
    if (l + 1 == net.weights.size()) return a;
    h = net.activation == Activation::Tanh ? Eigen::MatrixXd(a.array().tanh()) : a;
  }
  return h;
}

Eigen::VectorXd mlp_forward(const MLPParams& net, const Eigen::VectorXd& x) {
  return mlp_forward_batch(net, x.transpose()).row(0).transpose();
}

Eigen::VectorXd mlp_backward(const MLPParams& net, const MLPCache& cache, const Eigen::MatrixXd& g) {
  const std::size_t layers = net.weights.size();
  if (cache.inputs.size() != layers) throw DimensionError("mlp: cache does not match the network");
  if (g.cols() != net.output_dim() || g.rows() != cache.inputs.front().rows()) {
    throw DimensionError("mlp: adjoint shape mismatch");
  }
  std::vector<Eigen::MatrixXd> gw(layers);
  std::vector<Eigen::VectorXd> gb(layers);
  Eigen::MatrixXd delta = g;  // adjoint of the pre-activation of layer l
  for (std::size_t l = layers; l-- > 0;) {
    gw[l] = delta.transpose() * cache.inputs[l];
    gb[l] = delta.colwise().sum().transpose();
    if (l == 0) break;
    Eigen::MatrixXd dh = delta * net.weights[l];
    if (net.activation == Activation::Tanh) {
      const Eigen::ArrayXXd t = cache.inputs[l].array();
      dh.array() *= 1.0 - t * t;
    }
    delta = std::move(dh);
  }
  Eigen::VectorXd out(net.num_params());
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    out.segment(off, gw[l].size()) = gw[l].reshaped();
    off += gw[l].size();
    out.segment(off, gb[l].size()) = gb[l];
    off += gb[l].size();
  }
  return out;
}

Eigen::MatrixXd mlp_jacobian(const MLPParams& net, const Eigen::VectorXd& x) {
  MLPCache cache;
  mlp_forward_batch(net, x.transpose(), &cache);
  Eigen::MatrixXd j = net.weights.back();
  for (std::size_t l = net.weights.size() - 1; l-- > 0;) {
    Eigen::MatrixXd w = net.weights[l];
    if (net.activation == Activation::Tanh) {
      const Eigen::ArrayXd t = cache.inputs[l + 1].row(0).transpose().array();
      w = (1.0 - t * t).matrix().asDiagonal() * w;
    }
    j = j * w;
  }
  return j;
}

}  // namespace elliptic

#include "elliptic/autodiff.hpp"

#include <cmath>
#include <string>

#include "elliptic/errors.hpp"

namespace elliptic::ad {

Var Tape::variable(double value) {
  const int id = push(-1, 0.0, -1, 0.0);
  return {value, id, this};
}

std::vector<Var> Tape::variables(std::span<const double> values) {
  std::vector<Var> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(variable(v));
  return out;
}

int Tape::push(int a, double da, int b, double db) {
  nodes_.push_back({a, b, da, db});
  return static_cast<int>(nodes_.size()) - 1;
}

std::vector<double> Tape::backward(std::span<const std::pair<Var, double>> seeds) const {
  std::vector<double> adj(nodes_.size(), 0.0);
  for (const auto& [var, seed] : seeds) {
    if (var.tape == this && var.id >= 0) adj[static_cast<std::size_t>(var.id)] += seed;
  }
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    const double g = adj[i];
    if (g == 0.0) continue;
    const Node& n = nodes_[i];
    if (n.a >= 0) adj[static_cast<std::size_t>(n.a)] += n.da * g;
    if (n.b >= 0) adj[static_cast<std::size_t>(n.b)] += n.db * g;
  }
  return adj;
}

std::vector<double> Tape::backward(const Var& output) const {
  const std::pair<Var, double> seed{output, 1.0};
  return backward(std::span<const std::pair<Var, double>>(&seed, 1));
}

Var unary(const Var& x, double fx, double dfx) {
  if (x.tape == nullptr) return Var(fx);
  return {fx, x.tape->push(x.id, dfx, -1, 0.0), x.tape};
}

Var binary(const Var& x, const Var& y, double f, double dfx, double dfy) {
  if (x.tape == nullptr && y.tape == nullptr) return Var(f);
  if (x.tape == nullptr) return {f, y.tape->push(y.id, dfy, -1, 0.0), y.tape};
  if (y.tape == nullptr) return {f, x.tape->push(x.id, dfx, -1, 0.0), x.tape};
  return {f, x.tape->push(x.id, dfx, y.id, dfy), x.tape};
}

Gradient grad(const std::function<Var(std::span<const Var>)>& loss,
              const Eigen::VectorXd& theta) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(static_cast<std::size_t>(theta.size()));
  for (Eigen::Index i = 0; i < theta.size(); ++i) vars.push_back(tape.variable(theta[i]));
  const Var out = loss(vars);
  if (!std::isfinite(out.v)) throw NumericalError("grad: loss is not finite");
  Gradient g;
  g.value = out.v;
  g.grad = Eigen::VectorXd::Zero(theta.size());
  if (out.tape == nullptr) return g;
  const auto adj = tape.backward(out);
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double gi = adj[static_cast<std::size_t>(vars[static_cast<std::size_t>(i)].id)];
    if (!std::isfinite(gi)) {
      throw NumericalError("grad: non-finite adjoint for parameter " + std::to_string(i));
    }
    g.grad[i] = gi;
  }
  return g;
}

Eigen::VectorXd finite_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                  const Eigen::VectorXd& theta, double h) {
  Eigen::VectorXd g(theta.size());
  Eigen::VectorXd t = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    t[i] = theta[i] + h;
    const double fp = f(t);
    t[i] = theta[i] - h;
    const double fm = f(t);
    t[i] = theta[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace elliptic::ad

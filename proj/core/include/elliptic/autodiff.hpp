#pragma once

// Reverse-mode automatic differentiation over scalars.
//
// A Tape records every elementary operation as a node with at most two
// parents and the local partial derivatives with respect to them. A Var is a
// value together with its node index on a tape; constants carry no tape.
// Calling Tape::backward() sweeps the tape once in reverse and returns the
// adjoint of every node.
//
// Numerical templates in this library (spline flows, squashes, mixture
// quadrature) are written against a scalar type T and instantiated with both
// double and Var, so the same source gives fast values and exact gradients.

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace elliptic::ad {

class Tape;

struct Var {
  double v = 0.0;
  int id = -1;
  Tape* tape = nullptr;

  Var() = default;
  Var(double value) : v(value) {}  // NOLINT: implicit constants are intended
  Var(double value, int index, Tape* t) : v(value), id(index), tape(t) {}

  [[nodiscard]] bool is_constant() const { return tape == nullptr; }
};

class Tape {
 public:
  struct Node {
    int a = -1;
    int b = -1;
    double da = 0.0;
    double db = 0.0;
  };

  /// New independent variable.
  Var variable(double value);
  std::vector<Var> variables(std::span<const double> values);

  int push(int a, double da, int b, double db);

  /// Adjoints of all nodes given seed adjoints on selected outputs.
  [[nodiscard]] std::vector<double> backward(
      std::span<const std::pair<Var, double>> seeds) const;
  [[nodiscard]] std::vector<double> backward(const Var& output) const;

  void clear() { nodes_.clear(); }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

 private:
  std::vector<Node> nodes_;
};

inline double value(double x) { return x; }
inline double value(const Var& x) { return x.v; }

Var unary(const Var& x, double fx, double dfx);
Var binary(const Var& x, const Var& y, double f, double dfx, double dfy);

inline Var operator+(const Var& x, const Var& y) { return binary(x, y, x.v + y.v, 1.0, 1.0); }
inline Var operator-(const Var& x, const Var& y) { return binary(x, y, x.v - y.v, 1.0, -1.0); }
inline Var operator*(const Var& x, const Var& y) { return binary(x, y, x.v * y.v, y.v, x.v); }
inline Var operator/(const Var& x, const Var& y) {
  const double q = x.v / y.v;
  return binary(x, y, q, 1.0 / y.v, -q / y.v);
}
inline Var operator-(const Var& x) { return unary(x, -x.v, -1.0); }

inline Var operator+(const Var& x, double c) { return unary(x, x.v + c, 1.0); }
inline Var operator+(double c, const Var& x) { return unary(x, x.v + c, 1.0); }
inline Var operator-(const Var& x, double c) { return unary(x, x.v - c, 1.0); }
inline Var operator-(double c, const Var& x) { return unary(x, c - x.v, -1.0); }
inline Var operator*(const Var& x, double c) { return unary(x, x.v * c, c); }
inline Var operator*(double c, const Var& x) { return unary(x, x.v * c, c); }
inline Var operator/(const Var& x, double c) { return unary(x, x.v / c, 1.0 / c); }
inline Var operator/(double c, const Var& x) {
  const double q = c / x.v;
  return unary(x, q, -q / x.v);
}

inline Var& operator+=(Var& x, const Var& y) { return x = x + y; }
inline Var& operator-=(Var& x, const Var& y) { return x = x - y; }
inline Var& operator*=(Var& x, const Var& y) { return x = x * y; }
inline Var& operator/=(Var& x, const Var& y) { return x = x / y; }

inline bool operator<(const Var& x, const Var& y) { return x.v < y.v; }
inline bool operator>(const Var& x, const Var& y) { return x.v > y.v; }
inline bool operator<=(const Var& x, const Var& y) { return x.v <= y.v; }
inline bool operator>=(const Var& x, const Var& y) { return x.v >= y.v; }

inline Var exp(const Var& x) {
  const double e = std::exp(x.v);
  return unary(x, e, e);
}
inline Var log(const Var& x) { return unary(x, std::log(x.v), 1.0 / x.v); }
inline Var log1p(const Var& x) { return unary(x, std::log1p(x.v), 1.0 / (1.0 + x.v)); }
inline Var expm1(const Var& x) { return unary(x, std::expm1(x.v), std::exp(x.v)); }
inline Var sqrt(const Var& x) {
  const double s = std::sqrt(x.v);
  return unary(x, s, 0.5 / s);
}
inline Var tanh(const Var& x) {
  const double t = std::tanh(x.v);
  return unary(x, t, 1.0 - t * t);
}
inline Var abs(const Var& x) { return unary(x, std::abs(x.v), x.v < 0.0 ? -1.0 : 1.0); }

/// Result of differentiating a scalar function of a flat parameter vector.
struct Gradient {
  double value = 0.0;
  Eigen::VectorXd grad;
};

/// Evaluates `loss` on a fresh tape at `theta` and returns value and gradient.
Gradient grad(const std::function<Var(std::span<const Var>)>& loss,
              const Eigen::VectorXd& theta);

/// Central finite differences of a scalar function; test and diagnostic aid.
Eigen::VectorXd finite_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                  const Eigen::VectorXd& theta, double h = 1e-5);

}  // namespace elliptic::ad

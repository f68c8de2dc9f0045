#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "looptune/errors.hpp"

namespace looptune {

/// Continuous-time SISO plant: num(s)/den(s) * e^{-delay s},
/// coefficients in descending powers of s.
struct TransferFunction {
  std::vector<double> num;
  std::vector<double> den;
  double delay = 0.0;  // seconds
};

struct StateSpaceModel {
  Eigen::MatrixXd A;
  Eigen::VectorXd B;
  Eigen::RowVectorXd C;
  bool continuous = true;
};

struct DiscreteModel {
  Eigen::MatrixXd A_d;
  Eigen::VectorXd B_d;
  Eigen::RowVectorXd C;
  double dt = 0.0;      // seconds, > 0
  int delay_steps = 0;  // input delay as whole samples
};

namespace detail {

inline std::vector<double> strip_leading_zeros(std::vector<double> p) {
  std::size_t i = 0;
  while (i + 1 < p.size() && p[i] == 0.0) ++i;
  return {p.begin() + static_cast<std::ptrdiff_t>(i), p.end()};
}

}  // namespace detail

/// Controllable-canonical (companion form) realization of a strictly proper
/// transfer function. The delay is not part of the realization; it is carried
/// separately into the discrete model as whole input samples.
inline StateSpaceModel tf_to_ss(const TransferFunction& tf) {
  if (tf.den.empty() || tf.den.front() == 0.0) {
    throw UsageError("tf_to_ss: denominator leading coefficient must be nonzero");
  }
  if (tf.delay < 0.0) throw UsageError("tf_to_ss: delay must be >= 0");

  const std::vector<double> num = detail::strip_leading_zeros(tf.num);
  const std::vector<double> den = detail::strip_leading_zeros(tf.den);
  const std::size_t n = den.size() - 1;
  if (num.empty() || (num.size() == 1 && num[0] == 0.0)) {
    // zero numerator: realize as a zero map of the denominator's order
    if (n == 0) throw UsageError("tf_to_ss: denominator must have degree >= 1");
  } else if (num.size() > n) {
    throw UsageError(
        "tf_to_ss: transfer function must be strictly proper "
        "(deg num < deg den); direct feedthrough is not representable");
  }

  StateSpaceModel ss;
  ss.A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n),
                               static_cast<Eigen::Index>(n));
  ss.B = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  ss.C = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(n));
  ss.continuous = true;

  // monic denominator s^n + d_1 s^{n-1} + ... + d_n
  for (std::size_t i = 0; i + 1 < n; ++i) {
    ss.A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i + 1)) = 1.0;
  }
  for (std::size_t j = 0; j < n; ++j) {
    ss.A(static_cast<Eigen::Index>(n - 1), static_cast<Eigen::Index>(j)) =
        -den[n - j] / den[0];
  }
  ss.B(static_cast<Eigen::Index>(n - 1)) = 1.0;
  // C holds the numerator coefficients by ascending power of s
  for (std::size_t k = 0; k < num.size(); ++k) {
    ss.C(static_cast<Eigen::Index>(num.size() - 1 - k)) = num[k] / den[0];
  }
  return ss;
}

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
/// The argument is scaled until its inf-norm is below 0.5, expanded to
/// order 16, then squared back up. Plenty for the small plants handled here.
inline Eigen::MatrixXd expm(const Eigen::MatrixXd& M) {
  if (M.rows() != M.cols()) throw UsageError("expm: matrix must be square");
  const double norm = M.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) {
    squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  }
  const Eigen::MatrixXd A = M / std::ldexp(1.0, squarings);

  Eigen::MatrixXd X = Eigen::MatrixXd::Identity(M.rows(), M.cols());
  Eigen::MatrixXd term = X;
  for (int k = 1; k <= 16; ++k) {
    term = (term * A) / static_cast<double>(k);
    X += term;
  }
  for (int i = 0; i < squarings; ++i) X = X * X;
  return X;
}

/// Exact zero-order-hold discretization:
///   exp([[A, B], [0, 0]] dt) = [[A_d, B_d], [0, I]]
/// so A_d = e^{A dt} and B_d = (int_0^dt e^{A tau} dtau) B fall out of one
/// block exponential. The input delay must be a whole number of samples.
inline DiscreteModel zoh_discretize(const StateSpaceModel& ss, double dt,
                                    double delay = 0.0) {
  if (!(dt > 0.0)) throw UsageError("zoh_discretize: dt must be > 0");
  if (!ss.continuous) throw UsageError("zoh_discretize: model is already discrete");
  if (delay < 0.0) throw UsageError("zoh_discretize: delay must be >= 0");

  const double ratio = delay / dt;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9) {
    throw UsageError(
        "zoh_discretize: delay of " + std::to_string(delay) +
        " s is not an integer multiple of dt = " + std::to_string(dt) +
        " s; pick dt from { delay, delay/2, delay/3, ... }");
  }

  const Eigen::Index n = ss.A.rows();
  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(n + 1, n + 1);
  block.topLeftCorner(n, n) = ss.A * dt;
  block.topRightCorner(n, 1) = ss.B * dt;
  const Eigen::MatrixXd phi = expm(block);

  DiscreteModel m;
  m.A_d = phi.topLeftCorner(n, n);
  m.B_d = phi.topRightCorner(n, 1);
  m.C = ss.C;
  m.dt = dt;
  m.delay_steps = static_cast<int>(rounded);
  return m;
}

inline DiscreteModel discretize(const TransferFunction& tf, double dt) {
  return zoh_discretize(tf_to_ss(tf), dt, tf.delay);
}

/// y_t = C x_t (output read before the state update).
template <class S>
S plant_output(const DiscreteModel& m, std::span<const S> x) {
  if (static_cast<Eigen::Index>(x.size()) != m.C.cols()) {
    throw UsageError("plant_output: state dimension mismatch");
  }
  S y{0.0};
  for (Eigen::Index j = 0; j < m.C.cols(); ++j) {
    const double c = m.C(j);
    if (c != 0.0) y += c * x[static_cast<std::size_t>(j)];
  }
  return y;
}

/// x <- A_d x + B_d u. `u` must already be the delayed, saturated input;
/// the caller owns the delay FIFO.
template <class S>
void plant_advance(const DiscreteModel& m, std::vector<S>& x, const S& u) {
  const auto n = static_cast<std::size_t>(m.A_d.rows());
  if (x.size() != n) throw UsageError("plant_advance: state dimension mismatch");
  std::vector<S> next(n, S{0.0});
  for (std::size_t i = 0; i < n; ++i) {
    S acc{0.0};
    for (std::size_t j = 0; j < n; ++j) {
      const double a = m.A_d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (a != 0.0) acc += a * x[j];
    }
    const double b = m.B_d(static_cast<Eigen::Index>(i));
    if (b != 0.0) acc += b * u;
    next[i] = acc;
  }
  x = std::move(next);
}

template <class S>
struct PlantStep {
  std::vector<S> x;
  S y;
};

/// One step of x_{t+1} = A_d x_t + B_d u, y_t = C x_t.
template <class S>
PlantStep<S> step_plant(const DiscreteModel& m, std::span<const S> x, const S& u_sat) {
  PlantStep<S> out;
  out.y = plant_output(m, x);
  out.x.assign(x.begin(), x.end());
  plant_advance(m, out.x, u_sat);
  return out;
}

}  // namespace looptune

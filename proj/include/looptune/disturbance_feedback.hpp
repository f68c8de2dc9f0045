#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include "looptune/errors.hpp"
#include "looptune/lti.hpp"
#include "looptune/pid.hpp"
#include "looptune/simloop.hpp"

namespace looptune {

struct InstabilityError : Error {
  using Error::Error;
};

/// Augmented state X_t = [x_t; x_{t-1}; i_t] with i_{t+1} = i_t + x_t, which
/// turns PID design into output feedback over
///   Y_t = [ C x_t ;  C i_t ;  C (x_t - x_{t-1}) ].
///
///   A' = [A 0 0]   B' = [B]   C' = [C  0  0]
///        [I 0 0]        [0]        [0  0  C]
///        [I 0 I]        [0]        [C -C  0]
struct AugmentedModel {
  Eigen::MatrixXd A_aug;  // 3n x 3n
  Eigen::VectorXd B_aug;  // 3n
  Eigen::MatrixXd C_aug;  // 3p x 3n
  Eigen::Index n = 0;     // plant order
};

inline AugmentedModel build_augmented(const Eigen::MatrixXd& A,
                                      const Eigen::VectorXd& B,
                                      const Eigen::RowVectorXd& C) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || B.size() != n || C.cols() != n) {
    throw UsageError("build_augmented: dimension mismatch among A, B, C");
  }
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);

  AugmentedModel aug;
  aug.n = n;
  aug.A_aug = Eigen::MatrixXd::Zero(3 * n, 3 * n);
  aug.A_aug.block(0, 0, n, n) = A;
  aug.A_aug.block(n, 0, n, n) = I;
  aug.A_aug.block(2 * n, 0, n, n) = I;
  aug.A_aug.block(2 * n, 2 * n, n, n) = I;

  aug.B_aug = Eigen::VectorXd::Zero(3 * n);
  aug.B_aug.head(n) = B;

  aug.C_aug = Eigen::MatrixXd::Zero(3, 3 * n);
  aug.C_aug.block(0, 0, 1, n) = C;
  aug.C_aug.block(1, 2 * n, 1, n) = C;
  aug.C_aug.block(2, 0, 1, n) = C;
  aug.C_aug.block(2, n, 1, n) = -C;
  return aug;
}

/// Output-feedback form of the controller over Y_t = [y; integral of y; dy]:
///
///   u_t = -K Y_t - K_x xi_t,    xi_{t+1} = alpha xi_t + K_b Y_t
///
/// reproduces pid_step exactly in the regulation setting (r == 0):
///   K   = [k_p, k_i, -k_d]   (minus on k_d because the derivative term
///                             enters v with a POSITIVE sign on dy)
///   K_b = [0, 0, k_d],  K_x = -alpha.
/// With alpha == 0 the controller state xi drops out and u_t = -K Y_t.
struct OutputFeedbackPid {
  Eigen::RowVector3d K;
  Eigen::RowVector3d K_b;
  double K_x = 0.0;
};

inline OutputFeedbackPid pid_as_output_feedback(const PidGains<double>& g) {
  OutputFeedbackPid fb;
  fb.K << g.k_p, g.k_i, -g.k_d;
  fb.K_b << 0.0, 0.0, g.k_d;
  fb.K_x = -g.alpha;
  return fb;
}

/// Simulates the direct back-calculation loop and the augmented output
/// feedback loop side by side (regulation, r == 0, no saturation) and
/// returns max_t |y_direct - y_augmented|. Both loops route the input
/// through the same whole-sample delay FIFO.
inline double verify_pid_equivalence(const PidGains<double>& gains,
                                     const DiscreteModel& plant,
                                     const Eigen::VectorXd& x0, std::size_t T) {
  const Eigen::Index n = plant.A_d.rows();
  if (x0.size() != n) throw UsageError("verify_pid_equivalence: x0 dimension mismatch");
  const SaturationLimits huge{-1e300, 1e300};

  // direct loop
  std::vector<double> y_direct(T);
  {
    std::vector<double> x(x0.data(), x0.data() + n);
    std::vector<double> fifo(static_cast<std::size_t>(plant.delay_steps), 0.0);
    std::size_t head = 0;
    PidState<double> s;
    for (std::size_t t = 0; t < T; ++t) {
      const double y = plant_output<double>(plant, x);
      y_direct[t] = y;
      const auto out = pid_step<double>({gains.k_p, gains.k_i, gains.k_d, gains.b,
                                         gains.alpha},
                                        s, 0.0, y, huge);
      if (out.u_sat != out.v) {
        throw UsageError("verify_pid_equivalence: saturation engaged; the "
                         "equivalence is only claimed for the linear regime");
      }
      double u = out.u_sat;
      if (!fifo.empty()) {
        std::swap(u, fifo[head]);
        head = (head + 1) % fifo.size();
      }
      plant_advance(plant, x, u);
    }
  }

  // augmented output-feedback loop
  const AugmentedModel aug = build_augmented(plant.A_d, plant.B_d, plant.C);
  const OutputFeedbackPid fb = pid_as_output_feedback(gains);
  double deviation = 0.0;
  {
    Eigen::VectorXd X = Eigen::VectorXd::Zero(3 * n);
    X.head(n) = x0;
    double xi = 0.0;
    std::vector<double> fifo(static_cast<std::size_t>(plant.delay_steps), 0.0);
    std::size_t head = 0;
    for (std::size_t t = 0; t < T; ++t) {
      const Eigen::Vector3d Y = aug.C_aug * X;
      const double y = Y(0);
      deviation = std::max(deviation, std::abs(y - y_direct[t]));
      double u = -fb.K.dot(Y) - fb.K_x * xi;
      xi = gains.alpha * xi + fb.K_b.dot(Y);
      if (!fifo.empty()) {
        std::swap(u, fifo[head]);
        head = (head + 1) % fifo.size();
      }
      X = aug.A_aug * X + aug.B_aug * u;
    }
  }
  return deviation;
}

/// Saturation error lifted into the augmented state space. The vector is
/// B' (sat(u) - u), nonzero only in the first block, so it is stored as the
/// scalar factor.
struct SaturationDisturbance {
  double scale = 0.0;  // sat(u) - u

  Eigen::VectorXd dense(const AugmentedModel& aug) const { return scale * aug.B_aug; }
};

/// u_t = -K_c Y_t - sum_{l=1..h} K_d^[l] w_{t-l}, with the disturbance
/// history stored under the sparse scalar-times-B' convention
/// (w_history[0] = w_{t-1}, w_history[1] = w_{t-2}, ...). History shorter
/// than h counts as zero-padded at the episode start.
struct DisturbancePolicy {
  Eigen::RowVectorXd K_c;          // over Y_t
  std::vector<double> K_d;         // one scalar gain per lag, l = 1..h
  std::size_t h = 1;
  std::vector<Eigen::MatrixXd> M;  // optional predictor matrices M^[1..h]
};

inline double disturbance_feedback_control(const DisturbancePolicy& policy,
                                           const Eigen::VectorXd& Y,
                                           std::span<const double> w_history) {
  if (policy.h < 1) throw UsageError("disturbance policy: h must be >= 1");
  if (policy.K_d.size() != policy.h) {
    throw UsageError("disturbance policy: need one K_d gain per lag");
  }
  if (policy.K_c.size() != Y.size()) {
    throw UsageError("disturbance_feedback_control: Y dimension mismatch");
  }
  double u = -policy.K_c.dot(Y);
  const std::size_t terms = std::min<std::size_t>(policy.h, w_history.size());
  for (std::size_t l = 0; l < terms; ++l) u -= policy.K_d[l] * w_history[l];
  return u;
}

/// Back-calculation versus "plain PID plus constant-gain disturbance
/// feedback": loop (a) runs pid_step with the back-calculation gain b; loop
/// (b) runs the same PID with b = 0 and instead adds b * sum of its own past
/// saturation errors, recovered from the actuator model. Returns
/// max_t |u_sat_a - u_sat_b|.
inline double verify_backcalc_equivalence(const PidGains<double>& gains,
                                          const DiscreteModel& plant,
                                          const ReferenceSignal& reference,
                                          const SaturationLimits& lim,
                                          std::size_t T) {
  validate(lim);
  if (reference.samples.size() < T) {
    throw UsageError("verify_backcalc_equivalence: reference shorter than T");
  }

  // (a) back-calculation controller
  RolloutConfig cfg;
  cfg.horizon = T;
  cfg.dt = plant.dt;
  StaticPid<double> ctrl{{gains.k_p, gains.k_i, gains.k_d, gains.b, gains.alpha}};
  const auto res_a = rollout<double>(plant, ctrl, reference, cfg, lim);

  // (b) plain PID + disturbance feedback with K_d^[l] = -b over the full
  // horizon; the recovered disturbances are this loop's own saturation errors
  DisturbancePolicy policy;
  policy.h = T;
  policy.K_d.assign(T, -gains.b);
  policy.K_c = Eigen::RowVectorXd::Zero(1);

  double deviation = 0.0;
  {
    const auto n = static_cast<std::size_t>(plant.A_d.rows());
    std::vector<double> x(n, 0.0);
    std::vector<double> fifo(static_cast<std::size_t>(plant.delay_steps), 0.0);
    std::size_t head = 0;
    PidState<double> s;
    std::vector<double> w_newest_first;  // w_{t-1}, w_{t-2}, ...
    const SaturationLimits huge{-1e300, 1e300};
    const Eigen::VectorXd y_unused = Eigen::VectorXd::Zero(1);

    for (std::size_t t = 0; t < T; ++t) {
      const double y = plant_output<double>(plant, x);
      const double r = reference.samples[t];
      // plain PID value: run unsaturated so the internal clamp is inert
      const auto out =
          pid_step<double>({gains.k_p, gains.k_i, gains.k_d, 0.0, gains.alpha}, s,
                           r, y, huge);
      const double u =
          out.v + disturbance_feedback_control(policy, y_unused, w_newest_first);
      const double u_sat = clamp(u, lim.u_low, lim.u_high);
      w_newest_first.insert(w_newest_first.begin(), u_sat - u);

      deviation = std::max(deviation, std::abs(u_sat - res_a.u_sat[t]));

      double u_fed = u_sat;
      if (!fifo.empty()) {
        std::swap(u_fed, fifo[head]);
        head = (head + 1) % fifo.size();
      }
      plant_advance(plant, x, u_fed);
    }
  }
  return deviation;
}

/// State augmented once more with the disturbance history,
/// Z_t = [X_t; w_t; w_{t-1}; ...; w_{t-h}], under the predictor
/// w_{t+1} = sum_i M^[i] w_{t+1-i}:
///
///   Z_{t+1} = [A'  I        0 ] Z_t + [B'] u_t      Y^z = [C' 0] Z_t
///             [0   M^[1..h] 0 ]       [0 ]                [0  I]
///             [0   I-shift    ]       [0 ]
///
/// The unmodeled residuals w^r_t, e^r_t have no dynamics of their own and
/// are identically zero here.
struct ZDynamics {
  Eigen::MatrixXd A;  // (h+2)*d x (h+2)*d with d = 3n
  Eigen::MatrixXd B;
  Eigen::MatrixXd C;
  Eigen::Index d = 0;  // augmented-state block size (3n)
  std::size_t h = 0;

  static constexpr double w_residual = 0.0;
  static constexpr double e_residual = 0.0;
};

inline double spectral_radius(const Eigen::MatrixXd& A) {
  if (A.rows() != A.cols()) throw UsageError("spectral_radius: matrix must be square");
  Eigen::EigenSolver<Eigen::MatrixXd> solver(A, /*computeEigenvectors=*/false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

inline std::vector<std::complex<double>> eigenvalues(const Eigen::MatrixXd& A) {
  if (A.rows() != A.cols()) throw UsageError("eigenvalues: matrix must be square");
  Eigen::EigenSolver<Eigen::MatrixXd> solver(A, /*computeEigenvectors=*/false);
  std::vector<std::complex<double>> out(static_cast<std::size_t>(A.rows()));
  for (Eigen::Index i = 0; i < A.rows(); ++i) out[static_cast<std::size_t>(i)] = solver.eigenvalues()(i);
  return out;
}

inline ZDynamics build_z_dynamics(const AugmentedModel& aug,
                                  std::span<const Eigen::MatrixXd> M,
                                  std::size_t h) {
  if (h < 1) throw UsageError("build_z_dynamics: h must be >= 1");
  if (M.size() != h) throw UsageError("build_z_dynamics: need exactly h predictor matrices");
  const Eigen::Index d = aug.A_aug.rows();
  for (const auto& Mi : M) {
    if (Mi.rows() != d || Mi.cols() != d) {
      throw UsageError("build_z_dynamics: each M^[i] must be square of the augmented size");
    }
  }

  const auto hh = static_cast<Eigen::Index>(h);
  const Eigen::Index dim = d + (hh + 1) * d;
  ZDynamics z;
  z.d = d;
  z.h = h;
  z.A = Eigen::MatrixXd::Zero(dim, dim);
  z.A.block(0, 0, d, d) = aug.A_aug;
  z.A.block(0, d, d, d) = Eigen::MatrixXd::Identity(d, d);  // w_t drives X_{t+1}
  for (Eigen::Index i = 0; i < hh; ++i) {
    z.A.block(d, d + i * d, d, d) = M[static_cast<std::size_t>(i)];
  }
  for (Eigen::Index j = 1; j <= hh; ++j) {
    // new w_{t-j} slot copies the previous w_{t-j+1} slot
    z.A.block(d + j * d, d + (j - 1) * d, d, d) = Eigen::MatrixXd::Identity(d, d);
  }

  z.B = Eigen::MatrixXd::Zero(dim, 1);
  z.B.topRows(d) = aug.B_aug;

  const Eigen::Index p_rows = aug.C_aug.rows();
  z.C = Eigen::MatrixXd::Zero(p_rows + (hh + 1) * d, dim);
  z.C.block(0, 0, p_rows, d) = aug.C_aug;
  z.C.block(p_rows, d, (hh + 1) * d, (hh + 1) * d) =
      Eigen::MatrixXd::Identity((hh + 1) * d, (hh + 1) * d);

  const double rho = spectral_radius(z.A.bottomRightCorner((hh + 1) * d, (hh + 1) * d));
  if (rho > 1.0 + 1e-9) {
    throw InstabilityError(
        "build_z_dynamics: predictor dynamics must be at most marginally stable "
        "(spectral radius " + std::to_string(rho) + ")");
  }
  return z;
}

namespace detail {

inline bool pbh_rank_full_at(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                             std::complex<double> lambda, double rank_tol) {
  const Eigen::Index n = A.rows();
  Eigen::MatrixXcd test(n, n + B.cols());
  test.leftCols(n) =
      A.cast<std::complex<double>>() - lambda * Eigen::MatrixXcd::Identity(n, n);
  test.rightCols(B.cols()) = B.cast<std::complex<double>>();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXcd> qr(test);
  qr.setThreshold(rank_tol);
  return qr.rank() == n;
}

}  // namespace detail

/// PBH test: (A, B) is stabilizable iff [A - lambda I, B] has full row rank
/// at every eigenvalue with |lambda| >= 1.
inline bool pbh_stabilizable(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                             double rank_tol = 1e-9) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || B.rows() != n) throw UsageError("pbh_stabilizable: dimension mismatch");
  for (const auto& lambda : eigenvalues(A)) {
    if (std::abs(lambda) < 1.0 - 1e-9) continue;
    if (!detail::pbh_rank_full_at(A, B, lambda, rank_tol)) return false;
  }
  return true;
}

/// Marginal variant: uncontrollable modes may sit ON the unit circle but not
/// outside it. The integral augmentation plants structural modes at 1 that a
/// single input cannot steer (for n >= 2), so this is the property the
/// augmented system actually has.
inline bool pbh_marginally_stabilizable(const Eigen::MatrixXd& A,
                                        const Eigen::MatrixXd& B,
                                        double rank_tol = 1e-9) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || B.rows() != n) {
    throw UsageError("pbh_marginally_stabilizable: dimension mismatch");
  }
  for (const auto& lambda : eigenvalues(A)) {
    if (std::abs(lambda) <= 1.0 + 1e-9) continue;
    if (!detail::pbh_rank_full_at(A, B, lambda, rank_tol)) return false;
  }
  return true;
}

inline bool pbh_detectable(const Eigen::MatrixXd& A, const Eigen::MatrixXd& C,
                           double rank_tol = 1e-9) {
  return pbh_stabilizable(A.transpose(), C.transpose(), rank_tol);
}

inline bool pbh_marginally_detectable(const Eigen::MatrixXd& A,
                                      const Eigen::MatrixXd& C,
                                      double rank_tol = 1e-9) {
  return pbh_marginally_stabilizable(A.transpose(), C.transpose(), rank_tol);
}

}  // namespace looptune

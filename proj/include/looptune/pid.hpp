#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "looptune/autodiff.hpp"
#include "looptune/errors.hpp"

namespace looptune {

struct SaturationLimits {
  double u_low;
  double u_high;
};

inline void validate(const SaturationLimits& lim) {
  if (!(lim.u_low < lim.u_high)) {
    throw UsageError("saturation limits: u_low must be < u_high");
  }
}

/// Controller gains. `alpha` filters the derivative term and is an ordinary
/// double: it is a structural choice, not a tuned parameter.
template <class S>
struct PidGains {
  S k_p{0.0};
  S k_i{0.0};
  S k_d{0.0};
  S b{0.0};  // back-calculation gain
  double alpha = 0.0;
};

template <class S>
struct PidState {
  S integral{0.0};
  S d_prev{0.0};
  S y_prev{0.0};
};

template <class S>
struct PidOutput {
  S u_sat;
  S v;  // pre-saturation controller output
};

/// One controller update:
///
///   P_t     = k_p (r_t - y_t)
///   D_t     = alpha D_{t-1} + k_d (y_t - y_{t-1})
///   v_t     = P_t + I_t + D_t
///   u_t     = clamp(v_t, u_low, u_high)
///   I_{t+1} = I_t + k_i (r_t - y_t) + b (u_t - v_t)
///
/// Note the derivative acts on the measurement with a POSITIVE sign, i.e.
/// +k_d * dy, not the classical -k_d * dy. With k_d free to take either sign
/// during tuning the convention is harmless, but hand-picked gains must keep
/// it in mind: a damping derivative term needs k_d < 0 here.
template <class S>
PidOutput<S> pid_step(const PidGains<S>& g, PidState<S>& s, double r, const S& y,
                      const SaturationLimits& lim) {
  const S err = r - y;
  const S p_term = g.k_p * err;
  const S d_term = g.alpha * s.d_prev + g.k_d * (y - s.y_prev);
  const S v = p_term + s.integral + d_term;
  const S u_sat = clamp(v, lim.u_low, lim.u_high);
  if (!std::isfinite(primal(v))) throw NumericError("pid_step: v is not finite");

  s.integral = s.integral + g.k_i * err + g.b * (u_sat - v);
  if (!std::isfinite(primal(s.integral))) {
    throw NumericError("pid_step: integral term is not finite");
  }
  s.d_prev = d_term;
  s.y_prev = y;
  return {u_sat, v};
}

/// Two-input tanh MLP that modulates a set of base gains multiplicatively:
///
///   gains_t = base (1 + MLP(e_track, e_act))   elementwise over active gains
///
/// so zero weights reproduce the base controller exactly. Inputs are the
/// current tracking error and the previous step's saturation error.
/// Gains whose base value is 0 (k_d of a PI controller) stay 0 by
/// construction; `active` lists the gains the network drives.
template <class S>
struct GainNetwork {
  // indices into (k_p, k_i, k_d, b)
  enum : std::size_t { kP = 0, kI = 1, kD = 2, kB = 3 };

  PidGains<double> base;
  std::vector<std::size_t> active;  // which gains get an output head
  std::size_t hidden = 8;
  std::vector<S> w1;  // 2 x hidden, row-major: w1[in * hidden + j]
  std::vector<S> b1;  // hidden
  std::vector<S> w2;  // hidden x |active|, row-major: w2[j * active + k]
  std::vector<S> b2;  // |active|

  std::size_t outputs() const { return active.size(); }
  std::size_t parameter_count() const {
    return 2 * hidden + hidden + hidden * outputs() + outputs();
  }
};

/// PI controllers (k_d == 0) tune three heads, PID controllers four.
inline std::vector<std::size_t> active_gains_for(const PidGains<double>& base) {
  if (base.k_d == 0.0) {
    return {GainNetwork<double>::kP, GainNetwork<double>::kI, GainNetwork<double>::kB};
  }
  return {GainNetwork<double>::kP, GainNetwork<double>::kI, GainNetwork<double>::kD,
          GainNetwork<double>::kB};
}

template <class S>
GainNetwork<S> zero_gain_network(const PidGains<double>& base, std::size_t hidden = 8) {
  GainNetwork<S> net;
  net.base = base;
  net.active = active_gains_for(base);
  net.hidden = hidden;
  net.w1.assign(2 * hidden, S{0.0});
  net.b1.assign(hidden, S{0.0});
  net.w2.assign(hidden * net.outputs(), S{0.0});
  net.b2.assign(net.outputs(), S{0.0});
  return net;
}

template <class S>
PidGains<S> dynamic_gains(const GainNetwork<S>& net, const S& e_track, const S& e_act) {
  const std::size_t H = net.hidden;
  const std::size_t G = net.outputs();
  if (net.w1.size() != 2 * H || net.b1.size() != H || net.w2.size() != H * G ||
      net.b2.size() != G) {
    throw UsageError("dynamic_gains: network dimensions inconsistent");
  }

  std::vector<S> h(H, S{0.0});
  for (std::size_t j = 0; j < H; ++j) {
    h[j] = tanh(net.w1[j] * e_track + net.w1[H + j] * e_act + net.b1[j]);
  }

  PidGains<S> g;
  g.k_p = S{net.base.k_p};
  g.k_i = S{net.base.k_i};
  g.k_d = S{net.base.k_d};
  g.b = S{net.base.b};
  g.alpha = net.base.alpha;

  for (std::size_t k = 0; k < G; ++k) {
    S out = S{net.b2[k]};
    for (std::size_t j = 0; j < H; ++j) out += net.w2[j * G + k] * h[j];
    if (!std::isfinite(primal(out))) {
      throw NumericError("dynamic_gains: network output is not finite");
    }
    const S scaled = [&] {
      switch (net.active[k]) {
        case GainNetwork<S>::kP: return g.k_p * (1.0 + out);
        case GainNetwork<S>::kI: return g.k_i * (1.0 + out);
        case GainNetwork<S>::kD: return g.k_d * (1.0 + out);
        default: return g.b * (1.0 + out);
      }
    }();
    switch (net.active[k]) {
      case GainNetwork<S>::kP: g.k_p = scaled; break;
      case GainNetwork<S>::kI: g.k_i = scaled; break;
      case GainNetwork<S>::kD: g.k_d = scaled; break;
      default: g.b = scaled; break;
    }
  }
  return g;
}

}  // namespace looptune

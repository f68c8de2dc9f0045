#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "looptune/autodiff.hpp"
#include "looptune/errors.hpp"
#include "looptune/lti.hpp"
#include "looptune/pid.hpp"

namespace looptune {

enum class RefKind { step, switching, ramp };

struct ReferenceSignal {
  std::vector<double> samples;
  RefKind kind = RefKind::step;
};

struct RolloutConfig {
  std::size_t horizon = 1;
  double dt = 0.0;
  bool record_tape = false;
};

struct CostWeights {
  double q = 1.0;  // output error weight
  double r = 0.0;  // input weight
};

inline void validate(const CostWeights& w) {
  if (w.q < 0.0 || w.r < 0.0 || w.q + w.r <= 0.0) {
    throw UsageError("cost weights: need Q >= 0, R >= 0, Q + R > 0");
  }
}

/// Output magnitude beyond which a rollout is declared diverged. The tuner
/// maps this to a large penalty instead of crashing, so unstable intermediate
/// gain iterates do not kill a training run.
inline constexpr double kDivergenceThreshold = 1e9;

template <class S>
struct RolloutResult {
  std::vector<double> y;
  std::vector<double> u_sat;
  std::vector<double> v;
  std::vector<std::uint8_t> saturated;  // v outside the open interval (u_low, u_high)
  S cost{0.0};
};

/// Static controller: same gains every step.
template <class S>
struct StaticPid {
  PidGains<S> g;
  const PidGains<S>& gains(const S& /*e_track*/, const S& /*e_act*/) const {
    return g;
  }
};

/// Gains recomputed each step from the tracking error and the previous
/// step's saturation error.
template <class S>
struct DynamicPid {
  GainNetwork<S> net;
  PidGains<S> gains(const S& e_track, const S& e_act) const {
    return dynamic_gains(net, e_track, e_act);
  }
};

/// Closed-loop episode: read y, run the controller, saturate, feed the plant
/// through the input-delay FIFO, accumulate the quadratic cost. Instantiated
/// with S = DiffScalar the whole episode lands on the tape and `cost` is
/// differentiable with respect to the controller parameters; with S = double
/// it is a plain simulation with bitwise-identical trajectories.
template <class S, class Controller>
RolloutResult<S> rollout(const DiscreteModel& plant, const Controller& ctrl,
                         const ReferenceSignal& reference, const RolloutConfig& cfg,
                         const SaturationLimits& lim,
                         const CostWeights& weights = {1.0, 0.0}) {
  validate(lim);
  validate(weights);
  if (cfg.horizon < 1) throw UsageError("rollout: horizon must be >= 1");
  if (reference.samples.size() < cfg.horizon) {
    throw UsageError("rollout: reference shorter than the horizon");
  }
  if (cfg.dt > 0.0 && std::abs(cfg.dt - plant.dt) > 1e-12) {
    throw UsageError("rollout: config dt does not match the plant's dt");
  }

  const auto n = static_cast<std::size_t>(plant.A_d.rows());
  const auto T = cfg.horizon;

  std::vector<S> x(n, S{0.0});
  std::vector<S> fifo(static_cast<std::size_t>(plant.delay_steps), S{0.0});
  std::size_t fifo_head = 0;
  PidState<S> state;
  S e_act_prev{0.0};

  RolloutResult<S> res;
  res.y.reserve(T);
  res.u_sat.reserve(T);
  res.v.reserve(T);
  res.saturated.reserve(T);
  S cost_acc{0.0};

  for (std::size_t t = 0; t < T; ++t) {
    const S y = plant_output<S>(plant, x);
    const double y_val = primal(y);
    if (std::abs(y_val) > kDivergenceThreshold) {
      throw DivergedError(t, std::abs(y_val));
    }
    const double r = reference.samples[t];

    const S e_track = r - y;
    const auto& gains = ctrl.gains(e_track, e_act_prev);
    const PidOutput<S> out = pid_step<S>(gains, state, r, y, lim);

    res.y.push_back(y_val);
    res.v.push_back(primal(out.v));
    res.u_sat.push_back(primal(out.u_sat));
    res.saturated.push_back(primal(out.v) <= lim.u_low || primal(out.v) >= lim.u_high
                                ? 1
                                : 0);

    S u_delayed = out.u_sat;
    if (!fifo.empty()) {
      u_delayed = fifo[fifo_head];
      fifo[fifo_head] = out.u_sat;
      fifo_head = (fifo_head + 1) % fifo.size();
    }
    plant_advance(plant, x, u_delayed);
    e_act_prev = out.u_sat - out.v;

    const S dy = y - r;
    if (weights.q != 0.0) cost_acc += weights.q * square(dy);
    if (weights.r != 0.0) cost_acc += weights.r * square(out.u_sat);
  }
  res.cost = cost_acc;
  return res;
}

/// Sum_t Q (y_t - r_t)^2 + R u_t^2 over the stored (primal) series.
/// Matches the cost a taped rollout accumulates, term for term.
template <class S>
double cost(const RolloutResult<S>& res, const ReferenceSignal& reference,
            const CostWeights& weights) {
  validate(weights);
  if (reference.samples.size() < res.y.size()) {
    throw UsageError("cost: reference shorter than the result");
  }
  double acc = 0.0;
  for (std::size_t t = 0; t < res.y.size(); ++t) {
    const double dy = res.y[t] - reference.samples[t];
    if (weights.q != 0.0) acc += weights.q * square(dy);
    if (weights.r != 0.0) acc += weights.r * square(res.u_sat[t]);
  }
  return acc;
}

namespace detail {

/// 53-bit uniform in [0, 1) from two mt19937 draws. Hand-rolled so generated
/// signals are identical across standard libraries.
class UniformSource {
 public:
  explicit UniformSource(std::uint32_t seed) : eng_(seed) {}

  double unit() {
    const std::uint64_t hi = eng_();
    const std::uint64_t lo = eng_();
    const std::uint64_t bits = ((hi << 32) | lo) >> 11;
    return static_cast<double>(bits) * 0x1.0p-53;
  }

  double symmetric(double limit) { return (2.0 * unit() - 1.0) * limit; }

 private:
  std::mt19937 eng_;
};

}  // namespace detail

/// Deterministic reference batch. Step: one amplitude active from t = 0.
/// Switching: amplitude redrawn every T/5 steps. Ramp: linear from 0 to a
/// drawn amplitude at the end of the horizon. All amplitudes are uniform in
/// [-limit, +limit].
inline std::vector<ReferenceSignal> generate_references(RefKind kind, double limit,
                                                        std::size_t count,
                                                        std::size_t T,
                                                        std::uint32_t seed) {
  if (count < 1) throw UsageError("generate_references: count must be >= 1");
  if (!(limit > 0.0)) throw UsageError("generate_references: limit must be > 0");
  if (T < 1) throw UsageError("generate_references: horizon must be >= 1");

  detail::UniformSource rng(seed);
  std::vector<ReferenceSignal> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ReferenceSignal sig;
    sig.kind = kind;
    sig.samples.resize(T);
    switch (kind) {
      case RefKind::step: {
        const double amp = rng.symmetric(limit);
        for (std::size_t t = 0; t < T; ++t) sig.samples[t] = amp;
        break;
      }
      case RefKind::switching: {
        const std::size_t period = std::max<std::size_t>(1, T / 5);
        double amp = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
          if (t % period == 0) amp = rng.symmetric(limit);
          sig.samples[t] = amp;
        }
        break;
      }
      case RefKind::ramp: {
        const double amp = rng.symmetric(limit);
        for (std::size_t t = 0; t < T; ++t) {
          sig.samples[t] = amp * static_cast<double>(t + 1) / static_cast<double>(T);
        }
        break;
      }
    }
    out.push_back(std::move(sig));
  }
  return out;
}

struct ReferenceSplit {
  std::vector<ReferenceSignal> train;
  std::vector<ReferenceSignal> test;
};

inline ReferenceSplit split_references(std::vector<ReferenceSignal> all,
                                       std::size_t n_train) {
  if (n_train > all.size()) {
    throw UsageError("split_references: train count exceeds total");
  }
  ReferenceSplit split;
  split.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train), all.end());
  return split;
}

}  // namespace looptune

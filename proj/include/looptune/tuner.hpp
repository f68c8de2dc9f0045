#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "looptune/autodiff.hpp"
#include "looptune/errors.hpp"
#include "looptune/lti.hpp"
#include "looptune/pid.hpp"
#include "looptune/simloop.hpp"

namespace looptune {

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t t = 0;
  double lr = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState create(std::size_t dim, double lr_) {
    AdamState st;
    st.m.assign(dim, 0.0);
    st.v.assign(dim, 0.0);
    st.lr = lr_;
    return st;
  }
};

/// Standard Adam with bias correction:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
inline void adam_step(AdamState& st, std::vector<double>& params,
                      std::span<const double> grads) {
  if (params.size() != grads.size() || st.m.size() != params.size() ||
      st.v.size() != params.size()) {
    throw UsageError("adam_step: parameter/gradient dimension mismatch");
  }
  if (!(st.beta1 >= 0.0 && st.beta1 < 1.0 && st.beta2 >= 0.0 && st.beta2 < 1.0)) {
    throw UsageError("adam_step: beta1, beta2 must lie in [0, 1)");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient");
  }

  st.t += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
    const double m_hat = st.m[i] / bc1;
    const double v_hat = st.v[i] / bc2;
    params[i] -= st.lr * m_hat / (std::sqrt(v_hat) + st.eps);
  }
}

/// Parameterization of the static controller: (k_p, k_i, [k_d], b).
/// k_d is a free parameter only when the initial controller has one.
struct StaticGainSpec {
  PidGains<double> initial;
  bool tune_kd = false;

  static StaticGainSpec from(const PidGains<double>& g) {
    return {g, g.k_d != 0.0};
  }

  std::size_t dim() const { return tune_kd ? 4 : 3; }

  std::vector<double> initial_params() const {
    if (tune_kd) return {initial.k_p, initial.k_i, initial.k_d, initial.b};
    return {initial.k_p, initial.k_i, initial.b};
  }

  std::vector<std::string> param_names() const {
    if (tune_kd) return {"k_p", "k_i", "k_d", "b"};
    return {"k_p", "k_i", "b"};
  }

  template <class S>
  StaticPid<S> instantiate(std::span<const S> p) const {
    if (p.size() != dim()) throw UsageError("StaticGainSpec: wrong parameter count");
    StaticPid<S> ctrl;
    ctrl.g.k_p = p[0];
    ctrl.g.k_i = p[1];
    ctrl.g.k_d = tune_kd ? p[2] : S{initial.k_d};
    ctrl.g.b = p[tune_kd ? 3 : 2];
    ctrl.g.alpha = initial.alpha;
    return ctrl;
  }

  PidGains<double> gains_from(std::span<const double> p) const {
    return instantiate<double>(p).g;
  }
};

/// Parameterization of the dynamic controller: every weight and bias of the
/// gain network, flattened as w1, b1, w2, b2. All-zero parameters reproduce
/// the base controller exactly.
struct GainNetworkSpec {
  PidGains<double> base;
  std::size_t hidden = 8;

  std::size_t outputs() const { return active_gains_for(base).size(); }
  std::size_t dim() const {
    const std::size_t G = outputs();
    return 2 * hidden + hidden + hidden * G + G;
  }

  std::vector<double> initial_params() const { return std::vector<double>(dim(), 0.0); }

  std::vector<std::string> param_names() const {
    std::vector<std::string> names;
    names.reserve(dim());
    const std::size_t G = outputs();
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < hidden; ++j)
        names.push_back("w1." + std::to_string(i) + "." + std::to_string(j));
    for (std::size_t j = 0; j < hidden; ++j) names.push_back("b1." + std::to_string(j));
    for (std::size_t j = 0; j < hidden; ++j)
      for (std::size_t k = 0; k < G; ++k)
        names.push_back("w2." + std::to_string(j) + "." + std::to_string(k));
    for (std::size_t k = 0; k < G; ++k) names.push_back("b2." + std::to_string(k));
    return names;
  }

  template <class S>
  DynamicPid<S> instantiate(std::span<const S> p) const {
    if (p.size() != dim()) throw UsageError("GainNetworkSpec: wrong parameter count");
    DynamicPid<S> ctrl;
    ctrl.net.base = base;
    ctrl.net.active = active_gains_for(base);
    ctrl.net.hidden = hidden;
    const std::size_t G = ctrl.net.outputs();
    std::size_t at = 0;
    const auto take = [&](std::size_t count) {
      std::vector<S> block(p.begin() + static_cast<std::ptrdiff_t>(at),
                           p.begin() + static_cast<std::ptrdiff_t>(at + count));
      at += count;
      return block;
    };
    ctrl.net.w1 = take(2 * hidden);
    ctrl.net.b1 = take(hidden);
    ctrl.net.w2 = take(hidden * G);
    ctrl.net.b2 = take(G);
    return ctrl;
  }
};

struct TuneHyper {
  double lr = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 200;
  CostWeights weights{1.0, 0.0};
  double divergence_penalty = 1e6;
  // per-episode gradients can spike near saturation-boundary kinks; cap the
  // 2-norm so one bad episode cannot derail the moment estimates
  double grad_clip = 10.0;
  // when an epoch scores this much worse than the best snapshot, restart the
  // walk from that snapshot (momentum is kept, so the retry takes a new path)
  double rollback_factor = 3.0;
};

struct TuneReport {
  std::vector<double> epoch_mean_cost;  // mean training cost at each epoch start
  std::vector<double> final_params;     // best parameters seen during the run
  double final_train_cost = 0.0;        // mean training cost at final_params
};

struct EvalStats {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
  std::vector<double> costs;
};

/// Mean +- population std of the per-reference episode cost. Diverged
/// rollouts count with the penalty cost.
template <class Controller>
EvalStats evaluate(const DiscreteModel& plant, const Controller& ctrl,
                   std::span<const ReferenceSignal> refs, const SaturationLimits& lim,
                   const RolloutConfig& cfg, const CostWeights& weights,
                   double divergence_penalty = 1e6) {
  if (refs.empty()) throw UsageError("evaluate: need at least one reference");
  EvalStats stats;
  stats.costs.reserve(refs.size());
  for (const auto& ref : refs) {
    double c = divergence_penalty;
    try {
      const auto res = rollout<double>(plant, ctrl, ref, cfg, lim, weights);
      c = res.cost;
    } catch (const DivergedError&) {
    }
    stats.costs.push_back(c);
  }
  double sum = 0.0;
  for (double c : stats.costs) sum += c;
  stats.mean = sum / static_cast<double>(stats.costs.size());
  double sq = 0.0;
  for (double c : stats.costs) sq += (c - stats.mean) * (c - stats.mean);
  stats.stddev = std::sqrt(sq / static_cast<double>(stats.costs.size()));
  return stats;
}

/// Episodic gradient descent. Each epoch walks the training references in a
/// fixed order; every episode is simulated on its own tape, the episode cost
/// is backpropagated to the parameters, and one Adam step is taken. Diverged
/// episodes contribute the penalty cost and a zero gradient; an epoch where
/// every episode diverges aborts the run with the last-good parameters.
///
/// epoch_mean_cost[e] is the mean training cost with the parameters held at
/// their start-of-epoch values, so entry 0 is exactly the initial
/// controller's training cost. The parameters returned are the best-scoring
/// snapshot over the run (the per-episode walk fluctuates around a minimum;
/// the last iterate is not reliably the best one).
template <class Spec>
TuneReport tune(const DiscreteModel& plant, const Spec& spec,
                std::span<const ReferenceSignal> train_refs,
                const SaturationLimits& lim, const RolloutConfig& cfg,
                const TuneHyper& hyper) {
  if (train_refs.empty()) throw UsageError("tune: need at least one training reference");

  std::vector<double> params = spec.initial_params();
  AdamState adam = AdamState::create(params.size(), hyper.lr);
  adam.beta1 = hyper.beta1;
  adam.beta2 = hyper.beta2;
  adam.eps = hyper.eps;

  TuneReport report;
  report.epoch_mean_cost.reserve(hyper.epochs);

  Tape tape;
  tape.reserve(1 << 16);
  std::vector<double> grad(params.size(), 0.0);
  const std::vector<double> zero_grad(params.size(), 0.0);
  std::vector<double> last_good = params;

  const auto mean_cost_at = [&](std::span<const double> at) {
    const auto ctrl = spec.template instantiate<double>(at);
    double sum = 0.0;
    for (const auto& ref : train_refs) {
      try {
        sum += rollout<double>(plant, ctrl, ref, cfg, lim, hyper.weights).cost;
      } catch (const NumericError&) {
        sum += hyper.divergence_penalty;
      }
    }
    return sum / static_cast<double>(train_refs.size());
  };

  double best_cost = std::numeric_limits<double>::infinity();
  std::vector<double> best_params = params;

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    const double epoch_cost = mean_cost_at(params);
    report.epoch_mean_cost.push_back(epoch_cost);
    if (epoch_cost < best_cost) {
      best_cost = epoch_cost;
      best_params = params;
    } else if (hyper.rollback_factor > 0.0 &&
               epoch_cost > hyper.rollback_factor * best_cost) {
      params = best_params;
    }

    std::size_t n_ok = 0;
    for (const auto& ref : train_refs) {
      tape.clear();
      std::vector<DiffScalar> leaves;
      leaves.reserve(params.size());
      for (double pv : params) leaves.push_back(tape.leaf(pv));
      const auto ctrl = spec.template instantiate<DiffScalar>(
          std::span<const DiffScalar>(leaves));

      bool ok = false;
      try {
        RolloutConfig taped_cfg = cfg;
        taped_cfg.record_tape = true;
        const auto res =
            rollout<DiffScalar>(plant, ctrl, ref, taped_cfg, lim, hyper.weights);
        const Gradients g = tape.backward(res.cost);
        ok = true;
        for (std::size_t i = 0; i < leaves.size(); ++i) {
          grad[i] = g.wrt(leaves[i]);
          if (!std::isfinite(grad[i])) ok = false;
        }
        if (ok && hyper.grad_clip > 0.0) {
          double norm_sq = 0.0;
          for (double gi : grad) norm_sq += gi * gi;
          if (norm_sq > hyper.grad_clip * hyper.grad_clip) {
            const double scale = hyper.grad_clip / std::sqrt(norm_sq);
            for (double& gi : grad) gi *= scale;
          }
        }
      } catch (const NumericError&) {
        ok = false;
      }

      // a diverged episode still advances the optimizer state, with zero grad
      adam_step(adam, params, ok ? grad : zero_grad);
      if (ok) ++n_ok;
    }
    if (n_ok == 0) throw TuningFailedError(last_good);
    last_good = params;
  }

  const double last_cost = mean_cost_at(params);
  if (last_cost < best_cost) {
    best_cost = last_cost;
    best_params = params;
  }
  report.final_train_cost = best_cost;
  report.final_params = std::move(best_params);
  return report;
}

}  // namespace looptune

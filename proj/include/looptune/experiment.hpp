#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "looptune/config.hpp"
#include "looptune/csv.hpp"
#include "looptune/lti.hpp"
#include "looptune/pid.hpp"
#include "looptune/simloop.hpp"
#include "looptune/tuner.hpp"

namespace looptune {

/// A config resolved into runnable pieces: discretized plant, reference
/// batch split into train/test, and the tuning hyperparameters.
struct ExperimentSetup {
  DiscreteModel plant;
  SaturationLimits limits{-1.0, 1.0};
  RolloutConfig rollout{1, 0.0, false};
  CostWeights weights{1.0, 0.0};
  ReferenceSplit refs;
  PidGains<double> initial_gains;
  TuneHyper gain_hyper;
  TuneHyper network_hyper;
  std::size_t hidden = 8;
  std::uint32_t seed = 1;
};

inline ExperimentSetup make_setup(const ExperimentConfig& cfg,
                                  std::optional<std::uint32_t> seed_override = {},
                                  std::optional<std::size_t> epochs_override = {}) {
  ExperimentSetup s;
  s.plant = discretize(cfg.plant, cfg.dt);
  s.limits = cfg.limits;
  s.rollout = {cfg.horizon, cfg.dt, false};
  s.weights = cfg.weights;
  s.seed = seed_override.value_or(cfg.seed);
  s.refs = split_references(
      generate_references(cfg.ref_kind, cfg.ref_limit, cfg.ref_count, cfg.horizon,
                          s.seed),
      cfg.ref_train);
  s.initial_gains = cfg.gains;
  s.hidden = cfg.hidden;

  s.gain_hyper.lr = cfg.gain_lr;
  s.gain_hyper.epochs = epochs_override.value_or(cfg.epochs);
  s.gain_hyper.weights = cfg.weights;
  s.network_hyper = s.gain_hyper;
  s.network_hyper.lr = cfg.network_lr;
  return s;
}

/// The four controllers compared throughout: the initial PI/PID with the
/// back-calculation path disabled, the same with it enabled, the
/// gradient-tuned static controller, and the dynamic-gain controller tuned
/// on top of the static optimum.
struct FourWayComparison {
  EvalStats train[4];
  EvalStats test[4];
  TuneReport static_report;
  TuneReport dynamic_report;
  StaticGainSpec static_spec;
  GainNetworkSpec network_spec;
  PidGains<double> tuned_gains;
  std::vector<double> network_params;

  static constexpr const char* names[4] = {"initial", "initial+backcalc", "optimized",
                                           "dynamic"};
};

inline FourWayComparison run_four_way(const ExperimentSetup& s) {
  FourWayComparison out;

  PidGains<double> no_backcalc = s.initial_gains;
  no_backcalc.b = 0.0;
  const StaticPid<double> initial{no_backcalc};
  const StaticPid<double> backcalc{s.initial_gains};

  out.train[0] = evaluate(s.plant, initial, s.refs.train, s.limits, s.rollout, s.weights);
  out.test[0] = evaluate(s.plant, initial, s.refs.test, s.limits, s.rollout, s.weights);
  out.train[1] = evaluate(s.plant, backcalc, s.refs.train, s.limits, s.rollout, s.weights);
  out.test[1] = evaluate(s.plant, backcalc, s.refs.test, s.limits, s.rollout, s.weights);

  out.static_spec = StaticGainSpec::from(s.initial_gains);
  out.static_report =
      tune(s.plant, out.static_spec, s.refs.train, s.limits, s.rollout, s.gain_hyper);
  out.tuned_gains = out.static_spec.gains_from(
      std::span<const double>(out.static_report.final_params));
  const StaticPid<double> tuned{out.tuned_gains};
  out.train[2] = evaluate(s.plant, tuned, s.refs.train, s.limits, s.rollout, s.weights);
  out.test[2] = evaluate(s.plant, tuned, s.refs.test, s.limits, s.rollout, s.weights);

  out.network_spec = GainNetworkSpec{out.tuned_gains, s.hidden};
  out.dynamic_report = tune(s.plant, out.network_spec, s.refs.train, s.limits,
                            s.rollout, s.network_hyper);
  out.network_params = out.dynamic_report.final_params;
  const auto dynamic = out.network_spec.instantiate<double>(
      std::span<const double>(out.network_params));
  out.train[3] = evaluate(s.plant, dynamic, s.refs.train, s.limits, s.rollout, s.weights);
  out.test[3] = evaluate(s.plant, dynamic, s.refs.test, s.limits, s.rollout, s.weights);

  return out;
}

/// Serialization of tuned parameters (key = value files).
inline void save_static_params(const std::string& path, const StaticGainSpec& spec,
                               std::span<const double> params) {
  std::vector<std::string> names = spec.param_names();
  std::vector<double> values(params.begin(), params.end());
  names.push_back("alpha");
  values.push_back(spec.initial.alpha);
  if (!spec.tune_kd) {
    names.push_back("k_d");
    values.push_back(spec.initial.k_d);
  }
  const std::vector<std::string> comments{"tuned static controller gains"};
  write_params(path, names, values, comments);
}

inline PidGains<double> load_static_params(const std::string& path) {
  PidGains<double> g;
  bool saw_kp = false, saw_ki = false, saw_b = false;
  for (const auto& [key, value] : read_params(path)) {
    if (key == "k_p") {
      g.k_p = value;
      saw_kp = true;
    } else if (key == "k_i") {
      g.k_i = value;
      saw_ki = true;
    } else if (key == "k_d") {
      g.k_d = value;
    } else if (key == "b") {
      g.b = value;
      saw_b = true;
    } else if (key == "alpha") {
      g.alpha = value;
    } else {
      throw UsageError("unknown key in gain file " + path + ": " + key);
    }
  }
  if (!saw_kp || !saw_ki || !saw_b) {
    throw UsageError("gain file " + path + " must define k_p, k_i, and b");
  }
  return g;
}

inline void save_network_params(const std::string& path, const GainNetworkSpec& spec,
                                std::span<const double> params) {
  std::vector<std::string> names{"hidden", "base.k_p", "base.k_i", "base.k_d",
                                 "base.b", "base.alpha"};
  std::vector<double> values{static_cast<double>(spec.hidden), spec.base.k_p,
                             spec.base.k_i, spec.base.k_d, spec.base.b,
                             spec.base.alpha};
  const auto weight_names = spec.param_names();
  names.insert(names.end(), weight_names.begin(), weight_names.end());
  values.insert(values.end(), params.begin(), params.end());
  const std::vector<std::string> comments{"tuned dynamic-gain controller"};
  write_params(path, names, values, comments);
}

struct LoadedNetwork {
  GainNetworkSpec spec;
  std::vector<double> params;
};

inline LoadedNetwork load_network_params(const std::string& path) {
  const auto pairs = read_params(path);
  GainNetworkSpec spec;
  spec.hidden = 0;
  std::vector<std::pair<std::string, double>> weights;
  for (const auto& [key, value] : pairs) {
    if (key == "hidden") {
      spec.hidden = static_cast<std::size_t>(value);
    } else if (key == "base.k_p") {
      spec.base.k_p = value;
    } else if (key == "base.k_i") {
      spec.base.k_i = value;
    } else if (key == "base.k_d") {
      spec.base.k_d = value;
    } else if (key == "base.b") {
      spec.base.b = value;
    } else if (key == "base.alpha") {
      spec.base.alpha = value;
    } else {
      weights.emplace_back(key, value);
    }
  }
  if (spec.hidden == 0) {
    throw UsageError("network file " + path + " must define a positive 'hidden'");
  }
  const auto names = spec.param_names();
  if (weights.size() != names.size()) {
    throw UsageError("network file " + path + " holds " +
                     std::to_string(weights.size()) + " weights, expected " +
                     std::to_string(names.size()));
  }
  LoadedNetwork out;
  out.spec = spec;
  out.params.resize(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (weights[i].first != names[i]) {
      throw UsageError("network file " + path + ": expected key '" + names[i] +
                       "', found '" + weights[i].first + "'");
    }
    out.params[i] = weights[i].second;
  }
  return out;
}

}  // namespace looptune

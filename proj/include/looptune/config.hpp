#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "looptune/errors.hpp"
#include "looptune/lti.hpp"
#include "looptune/pid.hpp"
#include "looptune/simloop.hpp"
#include "looptune/tuner.hpp"

namespace looptune {

/// Everything one experiment needs: the plant, actuator limits, reference
/// batch, initial gains, cost weights, and tuning hyperparameters. Loaded
/// from an INI-style file of `[section]` headers and `key = value` lines.
struct ExperimentConfig {
  TransferFunction plant;
  double dt = 0.1;

  SaturationLimits limits{-1.0, 1.0};

  RefKind ref_kind = RefKind::step;
  double ref_limit = 1.0;
  std::size_t ref_count = 30;
  std::size_t ref_train = 20;
  std::size_t horizon = 500;
  std::uint32_t seed = 1;

  PidGains<double> gains;

  CostWeights weights{1.0, 0.0};

  double gain_lr = 0.05;
  double network_lr = 0.005;
  std::size_t epochs = 200;
  std::size_t hidden = 8;

  std::string out_dir = "out";
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline bool parse_double(const std::string& s, double& out) {
  std::istringstream in(s);
  in >> out;
  if (in.fail() || !std::isfinite(out)) return false;
  std::string rest;
  in >> rest;
  return rest.empty();
}

inline bool parse_double_list(const std::string& s, std::vector<double>& out) {
  out.clear();
  std::istringstream in(s);
  double v = 0.0;
  while (in >> v) out.push_back(v);
  return in.eof() && !out.empty();
}

class ConfigReader {
 public:
  explicit ConfigReader(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::string line;
    std::string section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      ++significant_lines_;
      if (line.front() == '[') {
        if (line.back() != ']') {
          violations_.push_back("line " + std::to_string(lineno) +
                                ": malformed section header '" + line + "'");
          continue;
        }
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        violations_.push_back("line " + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        continue;
      }
      const std::string key = section + "." + trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (values_.count(key)) {
        violations_.push_back("line " + std::to_string(lineno) + ": duplicate key '" +
                              key + "'");
        continue;
      }
      values_[key] = value;
    }
    if (significant_lines_ == 0) {
      violations_.push_back("empty config file");
      throw ConfigError(violations_);
    }
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return values_.count(key) > 0;
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    double v = 0.0;
    if (!parse_double(values_[key], v)) {
      violations_.push_back(key + ": '" + values_[key] + "' is not a number");
      return fallback;
    }
    return v;
  }

  double whole_number(const std::string& key, double fallback) {
    const double v = number(key, fallback);
    if (v != std::floor(v)) {
      violations_.push_back(key + ": must be a whole number");
      return fallback;
    }
    return v;
  }

  double required_number(const std::string& key) {
    if (!has(key)) {
      violations_.push_back(key + ": missing required key");
      return 0.0;
    }
    return number(key, 0.0);
  }

  double required_whole_number(const std::string& key) {
    if (!has(key)) {
      violations_.push_back(key + ": missing required key");
      return 0.0;
    }
    return whole_number(key, 0.0);
  }

  std::vector<double> required_numbers(const std::string& key) {
    if (!has(key)) {
      violations_.push_back(key + ": missing required key");
      return {};
    }
    std::vector<double> v;
    if (!parse_double_list(values_[key], v)) {
      violations_.push_back(key + ": '" + values_[key] + "' is not a list of numbers");
      return {};
    }
    return v;
  }

  std::string text(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    return values_[key];
  }

  void check(bool ok, const std::string& message) {
    if (!ok) violations_.push_back(message);
  }

  void reject_unknown_keys() {
    for (const auto& [key, value] : values_) {
      if (!seen_.count(key)) violations_.push_back("unknown key '" + key + "'");
    }
  }

  void finish() {
    if (!violations_.empty()) throw ConfigError(violations_);
  }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> seen_;
  std::vector<std::string> violations_;
  std::size_t significant_lines_ = 0;
};

}  // namespace detail

/// Parses and validates an experiment config. Collects every violation
/// before failing so a broken file is fixed in one pass.
inline ExperimentConfig load_config(const std::string& path) {
  detail::ConfigReader reader(path);
  ExperimentConfig cfg;

  cfg.plant.num = reader.required_numbers("plant.num");
  cfg.plant.den = reader.required_numbers("plant.den");
  cfg.plant.delay = reader.number("plant.delay", 0.0);
  cfg.dt = reader.required_number("plant.dt");

  cfg.limits.u_low = reader.required_number("limits.u_low");
  cfg.limits.u_high = reader.required_number("limits.u_high");

  const std::string kind = reader.text("reference.kind", "step");
  if (kind == "step") {
    cfg.ref_kind = RefKind::step;
  } else if (kind == "switching") {
    cfg.ref_kind = RefKind::switching;
  } else if (kind == "ramp") {
    cfg.ref_kind = RefKind::ramp;
  } else {
    reader.check(false, "reference.kind: must be step, switching, or ramp");
  }
  cfg.ref_limit = reader.required_number("reference.limit");
  cfg.ref_count = static_cast<std::size_t>(reader.whole_number("reference.count", 30));
  cfg.ref_train = static_cast<std::size_t>(reader.whole_number("reference.train", 20));
  cfg.horizon = static_cast<std::size_t>(reader.required_whole_number("reference.horizon"));
  cfg.seed = static_cast<std::uint32_t>(reader.whole_number("reference.seed", 1));

  cfg.gains.k_p = reader.required_number("gains.k_p");
  cfg.gains.k_i = reader.required_number("gains.k_i");
  cfg.gains.k_d = reader.number("gains.k_d", 0.0);
  cfg.gains.b = reader.required_number("gains.b");
  cfg.gains.alpha = reader.number("gains.alpha", 0.0);

  cfg.weights.q = reader.number("cost.q", 1.0);
  cfg.weights.r = reader.number("cost.r", 0.0);

  cfg.gain_lr = reader.number("tuning.gain_lr", 0.05);
  cfg.network_lr = reader.number("tuning.network_lr", 0.005);
  cfg.epochs = static_cast<std::size_t>(reader.whole_number("tuning.epochs", 200));
  cfg.hidden = static_cast<std::size_t>(reader.whole_number("tuning.hidden", 8));

  cfg.out_dir = reader.text("output.dir", "out");

  reader.reject_unknown_keys();

  // re-validate the module-level invariants here so a bad file fails at load
  reader.check(!cfg.plant.den.empty() && cfg.plant.den.front() != 0.0,
               "plant.den: leading coefficient must be nonzero");
  if (!cfg.plant.den.empty() && cfg.plant.den.front() != 0.0) {
    const auto num = detail::strip_leading_zeros(cfg.plant.num);
    const auto den = detail::strip_leading_zeros(cfg.plant.den);
    reader.check(den.size() >= 2, "plant.den: must have degree >= 1");
    reader.check(num.size() < den.size() || (num.size() == 1 && num[0] == 0.0),
                 "plant.num: transfer function must be strictly proper");
  }
  reader.check(cfg.plant.delay >= 0.0, "plant.delay: must be >= 0");
  reader.check(cfg.dt > 0.0, "plant.dt: must be > 0");
  if (cfg.dt > 0.0 && cfg.plant.delay > 0.0) {
    const double ratio = cfg.plant.delay / cfg.dt;
    reader.check(std::abs(ratio - std::round(ratio)) <= 1e-9,
                 "plant.delay: must be a whole multiple of plant.dt");
  }
  reader.check(cfg.limits.u_low < cfg.limits.u_high,
               "limits.u_low: must be < limits.u_high");
  reader.check(cfg.ref_limit > 0.0, "reference.limit: must be > 0");
  reader.check(cfg.ref_count >= 1, "reference.count: must be >= 1");
  reader.check(cfg.ref_train >= 1 && cfg.ref_train < cfg.ref_count,
               "reference.train: must satisfy 1 <= train < count");
  reader.check(cfg.horizon >= 1, "reference.horizon: must be >= 1");
  reader.check(cfg.gains.alpha >= 0.0 && cfg.gains.alpha < 1.0,
               "gains.alpha: must lie in [0, 1)");
  reader.check(cfg.weights.q >= 0.0 && cfg.weights.r >= 0.0 &&
                   cfg.weights.q + cfg.weights.r > 0.0,
               "cost: need q >= 0, r >= 0, q + r > 0");
  reader.check(cfg.gain_lr > 0.0, "tuning.gain_lr: must be > 0");
  reader.check(cfg.network_lr > 0.0, "tuning.network_lr: must be > 0");
  reader.check(cfg.epochs >= 1, "tuning.epochs: must be >= 1");
  reader.check(cfg.hidden >= 1, "tuning.hidden: must be >= 1");

  reader.finish();
  return cfg;
}

}  // namespace looptune

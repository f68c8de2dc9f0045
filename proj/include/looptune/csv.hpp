#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "looptune/errors.hpp"
#include "looptune/simloop.hpp"

namespace looptune {

/// 15 significant digits, enough to reload trajectories to well under 1e-9
/// even at the amplitudes a saturated loop reaches.
inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.15g", v);
  return buf;
}

/// 17 significant digits: exact double round-trip for parameter files.
inline std::string format_number_exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Writes to a temp file in the target directory, then renames into place,
/// so an interrupted run never leaves a truncated artifact behind.
inline void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out << content;
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw IoError("rename failed for " + path + ": " + ec.message());
}

/// Trajectory CSV, one row per step: t, r, y, v, u_sat, saturated.
/// LF line endings, header always present.
template <class S>
void write_csv(const RolloutResult<S>& res, const ReferenceSignal& reference,
               const std::string& path) {
  std::string out = "t,r,y,v,u_sat,saturated\n";
  for (std::size_t t = 0; t < res.y.size(); ++t) {
    out += std::to_string(t);
    out += ',';
    out += format_number(reference.samples[t]);
    out += ',';
    out += format_number(res.y[t]);
    out += ',';
    out += format_number(res.v[t]);
    out += ',';
    out += format_number(res.u_sat[t]);
    out += ',';
    out += res.saturated[t] ? '1' : '0';
    out += '\n';
  }
  write_file_atomic(path, out);
}

/// Learning-curve CSV: epoch, mean training cost.
inline void write_learning_curve(std::span<const double> epoch_costs,
                                 const std::string& path) {
  std::string out = "epoch,mean_train_cost\n";
  for (std::size_t e = 0; e < epoch_costs.size(); ++e) {
    out += std::to_string(e);
    out += ',';
    out += format_number(epoch_costs[e]);
    out += '\n';
  }
  write_file_atomic(path, out);
}

/// `key = value` parameter file with optional leading comment lines.
inline void write_params(const std::string& path,
                         std::span<const std::string> names,
                         std::span<const double> values,
                         std::span<const std::string> comments = {}) {
  if (names.size() != values.size()) {
    throw UsageError("write_params: names/values size mismatch");
  }
  std::string out;
  for (const auto& c : comments) {
    out += "# ";
    out += c;
    out += '\n';
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    out += names[i];
    out += " = ";
    out += format_number_exact(values[i]);
    out += '\n';
  }
  write_file_atomic(path, out);
}

/// Reads a `key = value` parameter file back, in file order.
inline std::vector<std::pair<std::string, double>> read_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open parameter file: " + path);
  std::vector<std::pair<std::string, double>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (!line.empty() && line.find_first_not_of(" \t\r\n") != std::string::npos) {
        throw UsageError("parameter file " + path + " line " +
                         std::to_string(lineno) + ": expected 'key = value'");
      }
      continue;
    }
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    const auto trim = [](std::string s) {
      const auto first = s.find_first_not_of(" \t\r\n");
      if (first == std::string::npos) return std::string();
      const auto last = s.find_last_not_of(" \t\r\n");
      return s.substr(first, last - first + 1);
    };
    key = trim(key);
    value = trim(value);
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (end == value.c_str() || *end != '\0') {
      throw UsageError("parameter file " + path + " line " + std::to_string(lineno) +
                       ": '" + value + "' is not a number");
    }
    out.emplace_back(key, v);
  }
  return out;
}

}  // namespace looptune

#pragma once

// Line-oriented `key = value` hyperparameter files:
//
//   # comment
//   theta_alpha = 160
//   theta_alpha_s = 30
//   r = 0.5
//
// Keys: theta_alpha, theta_beta, theta_gamma, theta_alpha_s, r, w1, w2,
// iterations.

#include <cmath>
#include <fstream>
#include <istream>
#include <string>

#include "spcrf/error.hpp"
#include "spcrf/potentials.hpp"

namespace spcrf {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_real(const std::string& text, const std::string& key) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw FormatError("config: value '" + text + "' for '" + key + "' is not a number");
  }
  if (used != text.size() || !std::isfinite(v)) {
    throw FormatError("config: value '" + text + "' for '" + key + "' is not a finite number");
  }
  return v;
}

}  // namespace detail

// Sets one named scalar hyperparameter. Returns false for unknown names.
inline bool set_parameter(CrfConfig& cfg, const std::string& key, double value) {
  if (key == "theta_alpha") cfg.pairwise.theta_alpha = value;
  else if (key == "theta_beta") cfg.pairwise.theta_beta = value;
  else if (key == "theta_gamma") cfg.pairwise.theta_gamma = value;
  else if (key == "theta_alpha_s") cfg.sp.theta_alpha_s = value;
  else if (key == "r") cfg.sp.r = value;
  else if (key == "w1") cfg.pairwise.w1 = KernelWeight(value);
  else if (key == "w2") cfg.pairwise.w2 = KernelWeight(value);
  else if (key == "iterations") {
    if (value < 1 || value != std::floor(value)) throw FormatError("config: iterations must be a positive integer");
    cfg.iterations = static_cast<std::size_t>(value);
  } else {
    return false;
  }
  return true;
}

inline void apply_config(CrfConfig& cfg, std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!set_parameter(cfg, key, detail::parse_real(value, key))) {
      throw FormatError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
}

inline void apply_config(CrfConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  apply_config(cfg, in);
}

}  // namespace spcrf

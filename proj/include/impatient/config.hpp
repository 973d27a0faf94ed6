#pragma once

// Experiment config files: flat `key = value` lines, `#` comments, and
// `[policy.NAME]` sections for per-policy options.
//
//   preset = genmodel
//   alpha = 0.4
//   policies = progressive, delayed
//
//   [policy.seq_elim_1pct]
//   threshold = 0.02

#include "impatient/csv.hpp"
#include "impatient/harness.hpp"

#include <fstream>
#include <istream>
#include <map>
#include <string>
#include <vector>

namespace impatient {

/// A bad key or value; `key` names the offending entry.
struct ConfigError : Error {
  ConfigError(const std::string& key, const std::string& what) : Error(what), key(key) {}
  std::string key;
};

struct ConfigFile {
  std::vector<std::pair<std::string, std::string>> global;
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> policies;
};

inline ConfigFile parse_config(std::istream& in) {
  ConfigFile out;
  std::string line;
  std::string section;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string s(csv::trim(line));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(s, "line " + std::to_string(line_no) + ": unterminated section header");
      section = std::string(csv::trim(std::string_view(s).substr(1, s.size() - 2)));
      if (section.rfind("policy.", 0) != 0)
        throw ConfigError(section, "line " + std::to_string(line_no) + ": unknown section '" + section + "'");
      section = section.substr(7);
      try {
        policy_spec(section);
      } catch (const LookupError& e) {
        throw ConfigError(section, "line " + std::to_string(line_no) + ": " + e.what());
      }
      out.policies[section];
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(s, "line " + std::to_string(line_no) + ": expected key = value");
    std::string key(csv::trim(std::string_view(s).substr(0, eq)));
    std::string value(csv::trim(std::string_view(s).substr(eq + 1)));
    if (section.empty()) {
      out.global.emplace_back(std::move(key), std::move(value));
    } else {
      out.policies[section].emplace_back(std::move(key), std::move(value));
    }
  }
  return out;
}

inline ConfigFile read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open config file '" + path + "'");
  return parse_config(in);
}

namespace detail {

inline double config_number(const std::string& key, const std::string& value) {
  const auto v = csv::parse_double(value);
  if (!v) throw ConfigError(key, "'" + key + "': expected a number, got '" + value + "'");
  return *v;
}

inline int config_int(const std::string& key, const std::string& value) {
  const double v = config_number(key, value);
  if (v != std::floor(v) || std::abs(v) > 2e9) throw ConfigError(key, "'" + key + "': expected an integer");
  return static_cast<int>(v);
}

inline bool config_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "on" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "off" || value == "no") return false;
  throw ConfigError(key, "'" + key + "': expected a boolean, got '" + value + "'");
}

inline EnvKind config_env(const std::string& value) {
  if (value == "synthetic") return EnvKind::synthetic;
  if (value == "two_outcome") return EnvKind::two_outcome;
  if (value == "replay") return EnvKind::replay;
  if (value == "nonstationary") return EnvKind::nonstationary;
  throw ConfigError("env", "'env': unknown environment '" + value + "'");
}

}  // namespace detail

/// Applies one global setting. Unknown keys raise ConfigError.
inline void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "preset") {
    c.preset = value;
  } else if (key == "env") {
    c.env = config_env(value);
  } else if (key == "alpha") {
    c.alpha = config_number(key, value);
  } else if (key == "J") {
    c.j_outcomes = config_int(key, value);
    c.traces.j_outcomes = c.j_outcomes;
  } else if (key == "num_arms") {
    c.num_arms = config_int(key, value);
    c.traces.num_arms = c.num_arms;
  } else if (key == "rho") {
    c.rho = config_number(key, value);
  } else if (key == "sigma_r2") {
    c.sigma_r2 = config_number(key, value);
  } else if (key == "d_max") {
    c.d_max = config_int(key, value);
  } else if (key == "traces") {
    c.traces_path = value;
  } else if (key == "traces_per_arm") {
    c.traces.traces_per_arm = config_int(key, value);
  } else if (key == "history_arms") {
    c.history_arms = config_int(key, value);
  } else if (key == "active_arms") {
    c.active_arms = config_int(key, value);
  } else if (key == "T") {
    c.horizon = config_int(key, value);
  } else if (key == "m") {
    c.batch_size = config_int(key, value);
  } else if (key == "replications") {
    c.replications = config_int(key, value);
  } else if (key == "seed") {
    const double v = config_number(key, value);
    if (v < 0 || v != std::floor(v)) throw ConfigError(key, "'seed': expected a non-negative integer");
    c.seed = std::stoull(value);
  } else if (key == "n_mc") {
    c.n_mc = config_int(key, value);
  } else if (key == "crn") {
    c.common_random_numbers = config_bool(key, value);
  } else if (key == "jobs") {
    c.jobs = config_int(key, value);
  } else if (key == "policies") {
    c.policies.clear();
    for (const auto& name : csv::split(value)) {
      const std::string n(csv::trim(name));
      try {
        c.policies.push_back(policy_spec(n));
      } catch (const LookupError& e) {
        throw ConfigError(key, e.what());
      }
    }
  } else {
    throw ConfigError(key, "unknown config key '" + key + "'");
  }
}

inline void apply_policy_setting(PolicySpec& p, const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "threshold") {
    p.threshold = config_number(key, value);
  } else if (key == "n_mc") {
    p.n_mc = config_int(key, value);
  } else if (key == "isotropic_prior") {
    p.isotropic_prior = config_bool(key, value);
  } else {
    throw ConfigError(key, "unknown policy key '" + key + "' in [policy." + p.name + "]");
  }
}

/// Starts from the file's preset (if any), then applies the remaining keys in
/// order.
inline ExperimentConfig resolve_config(const ConfigFile& file) {
  ExperimentConfig c;
  for (const auto& [k, v] : file.global) {
    if (k == "preset") {
      try {
        c = preset(v);
      } catch (const LookupError& e) {
        throw ConfigError(k, e.what());
      }
    }
  }
  for (const auto& [k, v] : file.global)
    if (k != "preset") apply_setting(c, k, v);
  for (const auto& [name, entries] : file.policies) {
    auto it = std::find_if(c.policies.begin(), c.policies.end(), [&](const PolicySpec& p) { return p.name == name; });
    if (it == c.policies.end()) throw ConfigError(name, "[policy." + name + "] is not in the policy roster");
    for (const auto& [k, v] : entries) apply_policy_setting(*it, k, v);
  }
  return c;
}

}  // namespace impatient

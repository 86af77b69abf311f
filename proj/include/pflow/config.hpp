#pragma once

// Experiment configuration.
//
// File grammar, one entry per line:
//   # comment             (also allowed after a value)
//   section.key = value
// Blank lines are ignored. Keys are dotted lowercase identifiers; values run
// to the end of the line (or the first '#') with surrounding blanks trimmed.
// Lists are comma separated. Later lines win; command-line flags win over
// the file. Every key has a task-dependent default, and unknown keys are
// rejected so typos cannot silently fall back to defaults.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pflow/errors.hpp"

namespace pflow {

using ConfigMap = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline ConfigMap parse_config_text(const std::string& text, const std::string& origin = "config") {
  ConfigMap out;
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || key.find_first_not_of("abcdefghijklmnopqrstuvwxyz0123456789_.") != std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": invalid key '" + key + "'");
    }
    out[key] = value;
  }
  return out;
}

inline ConfigMap read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

/// Defaults shared by every task, then task-specific adjustments.
inline ConfigMap default_config(const std::string& task) {
  ConfigMap m{
      {"task", task},
      {"seed", ""},
      {"out", "pflow_out"},
      {"threads", "0"},
      {"data.kind", "circles"},
      {"data.n_train", "10000"},
      {"data.path", ""},
      {"data.split", "0.8,0.1,0.1"},
      {"data.eval_conds", ""},
      {"flow.steps", "8"},
      {"flow.hidden", "64"},
      {"flow.depth", "2"},
      {"flow.activation", "softplus"},
      {"flow.clamp", "2"},
      {"dequant.kind", ""},
      {"dequant.compare", "none,softflow,paddingflow"},
      {"dequant.p", "1"},
      {"dequant.a", "0.01"},
      {"dequant.b", "2"},
      {"dequant.c_max", "0.1"},
      {"dequant.half_width", "0.5"},
      {"dequant.grid", "1:0,1:0.01"},
      {"train.lr", "0.001"},
      {"train.batch", "256"},
      {"train.iters", "10000"},
      {"train.log_every", "50"},
      {"train.eval_every", "0"},
      {"train.eval_points", "256"},
      {"eval.sets", "3"},
      {"eval.points", "1000"},
      {"eval.max_points", "4096"},
      {"checkpoint", "true"},
      {"svg", "true"},
  };
  if (task == "ik") {
    m["dequant.a"] = "0";
    m["dequant.c_max"] = "0.001";
    m["data.n_train"] = "20000";
    m["train.iters"] = "4000";
    m["ik.lengths"] = "1,1,1";
    m["ik.targets"] = "1000";
    m["ik.solutions"] = "100";
  } else if (task == "vae") {
    m["dequant.kind"] = "paddingflow";
    m["dequant.p"] = "2";
    m["dequant.a"] = "0";
    m["data.n_train"] = "2048";
    m["data.n_test"] = "256";
    m["train.batch"] = "64";
    m["train.iters"] = "2000";
    m["train.lr"] = "0.001";
    m["vae.latent"] = "2";
    m["vae.hidden"] = "64";
    m["vae.depth"] = "2";
    m["vae.reparam"] = "fused";
    m["vae.prior_steps"] = "4";
    m["vae.prior_hidden"] = "32";
    m["vae.smooth"] = "100";
    m["vae.window"] = "500";
  } else if (task == "bias-check") {
    m["bias.n"] = "1000000";
    m["bias.half_width"] = "0.5";
  } else if (task == "tabular") {
    m["dequant.compare"] = "none,paddingflow";
  }
  return m;
}

inline const std::vector<std::string>& known_tasks() {
  static const std::vector<std::string> tasks{"toy2d", "tabular", "ik", "vae", "bias-check"};
  return tasks;
}

/// Typed view over a fully resolved key/value map.
class ExperimentConfig {
 public:
  /// Resolves defaults <- file <- overrides and validates keys.
  static ExperimentConfig resolve(const ConfigMap& file, const ConfigMap& overrides) {
    std::string task = "toy2d";
    if (auto it = file.find("task"); it != file.end()) task = it->second;
    if (auto it = overrides.find("task"); it != overrides.end()) task = it->second;
    bool known = false;
    for (const auto& t : known_tasks()) known = known || t == task;
    if (!known) throw ConfigError("unknown task '" + task + "'");
    ConfigMap m = default_config(task);
    for (const auto* src : {&file, &overrides}) {
      for (const auto& [k, v] : *src) {
        if (!m.count(k)) throw ConfigError("unknown config key '" + k + "' for task " + task);
        m[k] = v;
      }
    }
    ExperimentConfig cfg(std::move(m));
    if (cfg.raw("seed").empty()) throw ConfigError("seed is mandatory (set seed = N or pass --seed)");
    cfg.get_u64("seed");
    return cfg;
  }

  const ConfigMap& values() const { return values_; }
  const std::string& task() const { return values_.at("task"); }
  std::uint64_t seed() const { return get_u64("seed"); }

  const std::string& raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
    return it->second;
  }
  std::string get_string(const std::string& key) const { return raw(key); }

  double get_double(const std::string& key) const {
    const std::string& s = raw(key);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size() || !std::isfinite(v)) throw ConfigError(key + ": expected a number, got '" + s + "'");
    return v;
  }

  std::uint64_t get_u64(const std::string& key) const {
    const std::string& s = raw(key);
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
    }
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw ConfigError(key + ": integer out of range: '" + s + "'");
    }
  }

  std::size_t get_size(const std::string& key, std::size_t min_value = 0) const {
    const auto v = static_cast<std::size_t>(get_u64(key));
    if (v < min_value) throw ConfigError(key + " must be >= " + std::to_string(min_value));
    return v;
  }

  bool get_bool(const std::string& key) const {
    const std::string& s = raw(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(key + ": expected true/false, got '" + s + "'");
  }

  std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : split_list(raw(key))) {
      ExperimentConfig tmp(ConfigMap{{key, item}});
      out.push_back(tmp.get_double(key));
    }
    return out;
  }

  /// 64-bit FNV-1a over the sorted effective key/value pairs, hex encoded.
  std::string hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&](const std::string& s) {
      for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& [k, v] : values_) {
      if (k == "out" || k == "threads") continue;  // do not change results
      feed(k);
      feed("=");
      feed(v);
      feed("\n");
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  /// Canonical text form; parse_config_text(echo()) reproduces the values.
  std::string echo() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  explicit ExperimentConfig(ConfigMap m) : values_(std::move(m)) {}
  ConfigMap values_;
};

}  // namespace pflow

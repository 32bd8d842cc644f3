#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "salab/error.hpp"

// Experiment configuration: one `key = value` per line, `#` starts a comment,
// sections are dotted key prefixes (`mdp.states = 5`). Keys are checked
// against a fixed schema; values are typed on access.

namespace salab {

enum class ValueType { integer, real, boolean, text, real_list };

struct KeySpec {
  const char* key;
  ValueType type;
  const char* help;
};

inline const std::vector<KeySpec>& config_schema() {
  static const std::vector<KeySpec> keys = {
      {"experiment", ValueType::text, "mse_curve | bias_variance_n | bias_variance_lambda | contraction_check | "
                                      "operator_equivalence | bound_envelope | optimal_n_scan"},
      {"base_seed", ValueType::integer, "root seed for every random stream"},
      {"runs", ValueType::integer, "Monte-Carlo replicas per curve (>= 2)"},
      {"horizon", ValueType::integer, "iterations per run"},
      {"output_dir", ValueType::text, "directory for CSV and SVG output"},
      {"mdp.file", ValueType::text, "MDP file written by `salab mdp gen` (instead of mdp.seed etc.)"},
      {"mdp.seed", ValueType::integer, "seed of the random MDP"},
      {"mdp.states", ValueType::integer, "number of states"},
      {"mdp.actions", ValueType::integer, "number of actions"},
      {"mdp.branching", ValueType::integer, "successors per (state, action)"},
      {"mdp.gamma", ValueType::real, "discount factor"},
      {"algorithm.family", ValueType::text, "q_learning | v_trace | nstep_td | td_lambda"},
      {"algorithm.n", ValueType::integer, "lookahead of V-trace / n-step TD"},
      {"algorithm.lambda", ValueType::real, "trace decay of TD(lambda)"},
      {"algorithm.c_bar", ValueType::real, "V-trace trace truncation"},
      {"algorithm.rho_bar", ValueType::real, "V-trace value truncation"},
      {"algorithm.policy", ValueType::text, "uniform | random (target policy)"},
      {"algorithm.policy_seed", ValueType::integer, "seed of a random target policy"},
      {"algorithm.behavior", ValueType::text, "uniform | random | target (behavior policy)"},
      {"algorithm.behavior_seed", ValueType::integer, "seed of a random behavior policy"},
      {"algorithm.policy_floor", ValueType::real, "minimum action probability of random policies"},
      {"algorithm.x0", ValueType::text, "zero | fixed_point | ones"},
      {"stepsize.kind", ValueType::text, "constant | linear | polynomial | admissible"},
      {"stepsize.alpha", ValueType::real, "stepsize scale"},
      {"stepsize.h", ValueType::real, "offset of diminishing stepsizes"},
      {"stepsize.xi", ValueType::real, "exponent of the polynomial stepsize"},
      {"noise.shape", ValueType::text, "none | bounded_symmetric"},
      {"noise.a2", ValueType::real, "noise growth with |x|"},
      {"noise.b2", ValueType::real, "noise floor"},
      {"checkpoints.kind", ValueType::text, "geometric | linear | every"},
      {"checkpoints.count", ValueType::integer, "number of linear checkpoints"},
      {"sweep.values", ValueType::real_list, "grid for n or lambda sweeps (comma separated)"},
      {"sweep.budget", ValueType::integer, "sample budget per run in the n sweep"},
      {"mixing.horizon", ValueType::integer, "horizon of the total-variation fit"},
      {"instances", ValueType::integer, "random instances for contraction / equivalence checks"},
      {"samples", ValueType::integer, "stationary draws per instance in the equivalence check"},
      {"pairs", ValueType::integer, "random pairs per contraction check"},
      {"gamma_grid", ValueType::real_list, "discount factors for optimal_n_scan"},
      {"plot.log_y", ValueType::boolean, "log-scale y axis"},
  };
  return keys;
}

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Nearest schema key; the last path component is compared on its own too, so
// `alpha0` finds `stepsize.alpha`.
inline std::string nearest_key(const std::string& key) {
  std::string best;
  std::size_t best_d = std::string::npos;
  for (const auto& ks : config_schema()) {
    std::string k = ks.key;
    std::size_t d = edit_distance(key, k);
    auto dot = k.rfind('.');
    if (dot != std::string::npos) d = std::min(d, edit_distance(key, k.substr(dot + 1)) + 1);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

struct ConfigEntry {
  std::string value;
  int line = 0;
  int column = 0;  // column of the value
};

class Config {
 public:
  static Config parse(const std::string& text) {
    Config c;
    std::istringstream is(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(is, raw)) {
      ++line_no;
      if (!raw.empty() && raw.back() == '\r') raw.pop_back();
      std::string line = raw;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      auto first = line.find_first_not_of(" \t");
      if (first == std::string::npos) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("expected `key = value`", line_no, static_cast<int>(line.size()) + 1);
      std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw ConfigError("missing key before `=`", line_no, static_cast<int>(first) + 1);
      for (char ch : key)
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '.'))
          throw ConfigError("invalid character in key `" + key + "`", line_no, static_cast<int>(first) + 1);
      auto vstart = line.find_first_not_of(" \t", eq + 1);
      std::string value = vstart == std::string::npos ? "" : trim(line.substr(vstart));
      int vcol = static_cast<int>(vstart == std::string::npos ? eq + 2 : vstart + 1);
      if (value.empty()) throw ConfigError("missing value for `" + key + "`", line_no, vcol);
      const KeySpec* spec = find_spec(key);
      if (!spec)
        throw ConfigError("unknown key `" + key + "`; did you mean `" + nearest_key(key) + "`?", line_no,
                          static_cast<int>(first) + 1);
      if (c.entries_.count(key)) throw ConfigError("duplicate key `" + key + "`", line_no, static_cast<int>(first) + 1);
      ConfigEntry e{value, line_no, vcol};
      check_type(*spec, e, key);
      c.entries_[key] = e;
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  std::string text(const std::string& key, const std::string& def) const { return has(key) ? entries_.at(key).value : def; }
  std::string text(const std::string& key) const { return require(key).value; }

  long integer(const std::string& key, long def) const { return has(key) ? to_integer(entries_.at(key), key) : def; }
  long integer(const std::string& key) const { return to_integer(require(key), key); }

  double real(const std::string& key, double def) const { return has(key) ? to_real(entries_.at(key), key) : def; }
  double real(const std::string& key) const { return to_real(require(key), key); }

  bool boolean(const std::string& key, bool def) const {
    if (!has(key)) return def;
    return entries_.at(key).value == "true";
  }

  std::vector<double> reals(const std::string& key, std::vector<double> def = {}) const {
    if (!has(key)) return def;
    return to_list(entries_.at(key), key);
  }

  // Semantic error tied to the line that set `key` (or to the file if unset).
  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    if (has(key)) {
      const auto& e = entries_.at(key);
      throw ConfigError("field `" + key + "`: " + msg, e.line, e.column);
    }
    throw ConfigError("field `" + key + "`: " + msg);
  }

  // Canonical text: sorted `key = value` lines. Used for hashing.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, e] : entries_) out += k + " = " + e.value + "\n";
    return out;
  }

  const std::map<std::string, ConfigEntry>& entries() const { return entries_; }

 private:
  std::map<std::string, ConfigEntry> entries_;

  static std::string trim(const std::string& s) {
    auto a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    auto b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
  }

  static const KeySpec* find_spec(const std::string& key) {
    for (const auto& ks : config_schema())
      if (key == ks.key) return &ks;
    return nullptr;
  }

  const ConfigEntry& require(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("field `" + key + "` is required for this experiment");
    return it->second;
  }

  static long to_integer(const ConfigEntry& e, const std::string& key) {
    long v = 0;
    const char* b = e.value.data();
    const char* end = b + e.value.size();
    auto r = std::from_chars(b, end, v);
    if (r.ec != std::errc() || r.ptr != end)
      throw ConfigError("`" + key + "` expects an integer, got `" + e.value + "`", e.line, e.column);
    return v;
  }

  static double to_real(const ConfigEntry& e, const std::string& key) {
    try {
      std::size_t used = 0;
      double v = std::stod(e.value, &used);
      if (used == e.value.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("`" + key + "` expects a number, got `" + e.value + "`", e.line, e.column);
  }

  static std::vector<double> to_list(const ConfigEntry& e, const std::string& key) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= e.value.size()) {
      auto comma = e.value.find(',', pos);
      std::string item = trim(e.value.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
      ConfigEntry sub{item, e.line, e.column + static_cast<int>(pos)};
      if (item.empty()) throw ConfigError("`" + key + "` has an empty list item", e.line, sub.column);
      out.push_back(to_real(sub, key));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    return out;
  }

  static void check_type(const KeySpec& spec, const ConfigEntry& e, const std::string& key) {
    switch (spec.type) {
      case ValueType::integer: to_integer(e, key); break;
      case ValueType::real: to_real(e, key); break;
      case ValueType::real_list: to_list(e, key); break;
      case ValueType::boolean:
        if (e.value != "true" && e.value != "false")
          throw ConfigError("`" + key + "` expects true or false, got `" + e.value + "`", e.line, e.column);
        break;
      case ValueType::text: break;
    }
  }
};

// FNV-1a of the canonical text, as 16 hex digits.
inline std::string config_hash(const Config& c) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : c.canonical()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace salab

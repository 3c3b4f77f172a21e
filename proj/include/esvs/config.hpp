#pragma once

// Flat "key = value" configuration files. Lines starting with '#' and blank
// lines are ignored. Every key must be consumed by a reader; leftovers are
// reported as unknown.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include "esvs/error.hpp"

namespace esvs {

class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::istream& in) {
    KeyValueConfig cfg;
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
      ++line;
      const std::string s = trim(raw);
      if (s.empty() || s[0] == '#') continue;
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ParseError(line, "expected 'key = value'");
      const std::string key = trim(s.substr(0, eq));
      const std::string value = trim(s.substr(eq + 1));
      if (key.empty()) throw ParseError(line, "empty key");
      if (!cfg.values_.emplace(key, value).second) {
        throw ParseError(line, "duplicate key '" + key + "'");
      }
    }
    return cfg;
  }

  static KeyValueConfig parse(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open config file " + path);
    return parse(f);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  /// Overwrites `out` when the key is present.
  void get(const std::string& key, double& out) {
    if (auto v = take(key)) out = to_double(key, *v);
  }
  void get(const std::string& key, int& out) {
    if (auto v = take(key)) out = static_cast<int>(to_int(key, *v));
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (auto v = take(key)) {
      const long long x = to_int(key, *v);
      if (x < 0) throw ConfigError(key + ": must be nonnegative");
      out = static_cast<std::uint64_t>(x);
    }
  }
  void get(const std::string& key, bool& out) {
    if (auto v = take(key)) {
      if (*v == "true" || *v == "1") out = true;
      else if (*v == "false" || *v == "0") out = false;
      else throw ConfigError(key + ": expected true or false, got '" + *v + "'");
    }
  }
  void get(const std::string& key, std::string& out) {
    if (auto v = take(key)) out = *v;
  }

  /// Keys beginning with `prefix`, in sorted order; each is marked consumed.
  std::map<std::string, std::string> take_prefixed(const std::string& prefix) {
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : values_) {
      if (k.rfind(prefix, 0) == 0) {
        out.emplace(k, v);
        used_.insert(k);
      }
    }
    return out;
  }

  /// Throws ConfigError naming the first key nobody read.
  void require_consumed() const {
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }
  }

  static double to_double(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected a finite number, got '" + v + "'");
    }
  }

  static long long to_int(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const long long x = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  const std::string* take(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
};

}  // namespace esvs

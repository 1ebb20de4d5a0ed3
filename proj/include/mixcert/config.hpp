#pragma once

// `key = value` configuration files.
//
//   # comment
//   include = ../common.cfg      (path relative to this file; later keys win)
//   alpha_grid = 0, 0.25, linspace(0.5, 1, 3)
//   gamma_grid = 0, logspace(-2, 3, 6), inf
//
// List values are comma separated; linspace(a, b, n) and logspace(a, b, n)
// (powers of ten) expand in place.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mixcert/error.hpp"

namespace mixcert {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_top_level(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char ch : s) {
    if (ch == '(') ++depth;
    if (ch == ')') --depth;
    if (ch == sep && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  return out;
}

inline double parse_real(const std::string& token, const std::string& key) {
  const std::string t = trim(token);
  if (t == "inf" || t == "+inf") return std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used != t.size()) throw std::invalid_argument(t);
    return v;
  } catch (const std::exception&) {
    throw FormatError("config key '" + key + "': '" + t + "' is not a number");
  }
}

}  // namespace detail

/// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig load(const std::string& path) {
    KeyValueConfig cfg;
    cfg.merge_file(path, 0);
    return cfg;
  }

  static KeyValueConfig parse(std::istream& in, const std::string& name = "<config>",
                              const std::filesystem::path& base_dir = ".") {
    KeyValueConfig cfg;
    cfg.merge_stream(in, name, base_dir, 0);
    return cfg;
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  const std::map<std::string, std::string>& entries() const { return entries_; }

  std::string get(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw FormatError("missing config key '" + key + "'");
    return it->second;
  }
  std::string get(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
  }

  double get_double(const std::string& key) const { return detail::parse_real(get(key), key); }
  double get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
  }

  std::uint64_t get_u64(const std::string& key) const {
    const std::string v = get(key);
    try {
      std::size_t used = 0;
      const unsigned long long out = std::stoull(v, &used);
      if (used != v.size() || v.front() == '-') throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw FormatError("config key '" + key + "': '" + v + "' is not a non-negative integer");
    }
  }
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? get_u64(key) : fallback;
  }
  std::size_t get_size(const std::string& key, std::size_t fallback) const {
    return static_cast<std::size_t>(get_u64(key, fallback));
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw FormatError("config key '" + key + "': '" + v + "' is not a boolean");
  }

  std::vector<std::string> get_strings(const std::string& key) const {
    return detail::split_top_level(get(key), ',');
  }
  std::vector<std::string> get_strings(const std::string& key,
                                       const std::vector<std::string>& fallback) const {
    return has(key) ? get_strings(key) : fallback;
  }

  std::vector<double> get_list(const std::string& key) const {
    std::vector<double> out;
    for (const std::string& token : get_strings(key)) {
      if (token.empty()) continue;
      const bool lin = token.rfind("linspace(", 0) == 0;
      const bool log = token.rfind("logspace(", 0) == 0;
      if (lin || log) {
        if (token.back() != ')') throw FormatError("config key '" + key + "': unbalanced '" + token + "'");
        const auto args = detail::split_top_level(token.substr(9, token.size() - 10), ',');
        if (args.size() != 3) throw FormatError("config key '" + key + "': " + token + " needs 3 arguments");
        const double a = detail::parse_real(args[0], key);
        const double b = detail::parse_real(args[1], key);
        const double n = detail::parse_real(args[2], key);
        if (!(n >= 1.0) || n != static_cast<double>(static_cast<std::size_t>(n))) {
          throw FormatError("config key '" + key + "': point count must be a positive integer");
        }
        const auto count = static_cast<std::size_t>(n);
        for (std::size_t k = 0; k < count; ++k) {
          const double t = count == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(count - 1);
          const double v = k + 1 == count ? b : a + (b - a) * t;
          out.push_back(log ? std::pow(10.0, v) : v);
        }
      } else {
        out.push_back(detail::parse_real(token, key));
      }
    }
    return out;
  }
  std::vector<double> get_list(const std::string& key, const std::vector<double>& fallback) const {
    return has(key) ? get_list(key) : fallback;
  }

  std::vector<std::size_t> get_sizes(const std::string& key, const std::vector<std::size_t>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<std::size_t> out;
    for (const std::string& token : get_strings(key)) {
      if (token.empty()) continue;
      const double v = detail::parse_real(token, key);
      if (!(v >= 0.0) || v != static_cast<double>(static_cast<std::size_t>(v))) {
        throw FormatError("config key '" + key + "': '" + token + "' is not a non-negative integer");
      }
      out.push_back(static_cast<std::size_t>(v));
    }
    return out;
  }

  /// "key=value\n" lines in key order, skipping `ignored` keys.
  std::string canonical(const std::set<std::string>& ignored = {}) const {
    std::string out;
    for (const auto& [k, v] : entries_) {
      if (ignored.count(k)) continue;
      out += k + "=" + v + "\n";
    }
    return out;
  }

  std::uint64_t hash(const std::set<std::string>& ignored = {}) const { return fnv1a(canonical(ignored)); }

 private:
  void merge_file(const std::filesystem::path& path, int depth) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file '" + path.string() + "'");
    merge_stream(in, path.string(), path.parent_path(), depth);
  }

  void merge_stream(std::istream& in, const std::string& name, const std::filesystem::path& base_dir,
                    int depth) {
    if (depth > 8) throw FormatError(name + ": include nesting too deep");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string t = detail::trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw FormatError(name + ":" + std::to_string(line_no) + ": expected 'key = value'");
      }
      const std::string key = detail::trim(t.substr(0, eq));
      const std::string value = detail::trim(t.substr(eq + 1));
      if (key.empty()) throw FormatError(name + ":" + std::to_string(line_no) + ": empty key");
      if (key == "include") {
        merge_file(base_dir / value, depth + 1);
      } else {
        entries_[key] = value;
      }
    }
  }

  std::map<std::string, std::string> entries_;
};

}  // namespace mixcert

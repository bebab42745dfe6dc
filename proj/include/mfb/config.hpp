#pragma once

// Run configuration: flat `key = value` lines with dotted keys, `#` starts a
// comment. Every read marks its key; unread keys are reported as errors.

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "mfb/error.hpp"
#include "mfb/grid.hpp"

namespace mfb {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(trim(item));
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
    return std::nullopt;
  return v;
}

}  // namespace detail

class Config {
 public:
  static Config parse(std::istream& is, const std::string& base_dir = ".") {
    Config cfg;
    cfg.base_dir_ = base_dir;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
      const std::string key = detail::trim(line.substr(0, eq));
      if (key.empty()) throw ConfigError("line " + std::to_string(lineno), "empty key");
      if (cfg.values_.count(key)) throw ConfigError(key, "duplicate key");
      cfg.values_[key] = detail::trim(line.substr(eq + 1));
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config", "cannot open '" + path + "'");
    const auto slash = path.find_last_of('/');
    return parse(is, slash == std::string::npos ? "." : path.substr(0, slash));
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& base_dir() const noexcept { return base_dir_; }

  std::string get_string(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(key, "missing required key");
    used_.insert(key);
    return it->second;
  }
  std::string get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
  }

  double get_double(const std::string& key) const {
    const auto v = detail::parse_double(get_string(key));
    if (!v) throw ConfigError(key, "expected a finite number");
    return *v;
  }
  double get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
  }

  long get_int(const std::string& key) const {
    const std::string s = get_string(key);
    long v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
      throw ConfigError(key, "expected an integer");
    return v;
  }
  long get_int(const std::string& key, long fallback) const {
    return has(key) ? get_int(key) : fallback;
  }

  std::vector<double> get_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : detail::split(get_string(key), ',')) {
      const auto v = detail::parse_double(item);
      if (!v) throw ConfigError(key, "expected a comma-separated list of numbers");
      out.push_back(*v);
    }
    return out;
  }

  /// `x, y; x, y; ...`
  std::vector<Point> get_points(const std::string& key, int dim) const {
    std::vector<Point> out;
    for (const auto& item : detail::split(get_string(key), ';')) {
      if (item.empty()) continue;
      const auto coords = detail::split(item, ',');
      if (static_cast<int>(coords.size()) != dim)
        throw ConfigError(key, "every point needs " + std::to_string(dim) + " coordinates");
      Point p{};
      for (int d = 0; d < dim; ++d) {
        const auto v = detail::parse_double(coords[static_cast<std::size_t>(d)]);
        if (!v) throw ConfigError(key, "bad coordinate '" + coords[static_cast<std::size_t>(d)] + "'");
        p[d] = *v;
      }
      out.push_back(p);
    }
    return out;
  }

  /// Throws for the first key that no reader asked for.
  void check_all_used() const {
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) throw ConfigError(k, "unknown key");
  }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
  std::string base_dir_ = ".";
};

}  // namespace mfb

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pplad/error.hpp"
#include "pplad/io.hpp"

namespace pplad {

/// Sectioned key/value configuration.
///
///   # comment (also ';')
///   [section]
///   key = value
///
/// Keys are addressed as "section.key"; keys before any section header have no
/// prefix. Whitespace around keys and values is trimmed, values run to end of
/// line (no inline comments), and a repeated key is an error. Lists are
/// comma-separated.
class Config {
 public:
  Config() = default;

  static Config parse(std::string_view text, const std::string& context = "config") {
    Config c;
    std::string section;
    std::size_t line_no = 0;
    for (const auto& raw : io::lines(text)) {
      ++line_no;
      const auto line = io::trim(raw);
      const auto where = context + ":" + std::to_string(line_no);
      if (line.empty() || line.front() == '#' || line.front() == ';') continue;
      if (line.front() == '[') {
        if (line.back() != ']') fail(ErrorCode::Config, where + ": unterminated section header");
        section = std::string(io::trim(line.substr(1, line.size() - 2)));
        if (section.empty()) fail(ErrorCode::Config, where + ": empty section name");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) fail(ErrorCode::Config, where + ": expected key = value");
      const auto key = std::string(io::trim(line.substr(0, eq)));
      if (key.empty()) fail(ErrorCode::Config, where + ": empty key");
      const auto full = section.empty() ? key : section + "." + key;
      if (!c.values_.emplace(full, std::string(io::trim(line.substr(eq + 1)))).second) {
        fail(ErrorCode::Config, where + ": duplicate key " + full);
      }
    }
    return c;
  }

  static Config load(const std::filesystem::path& path) { return parse(io::read_file(path), path.string()); }

  /// Applies "section.key=value".
  void set_override(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      fail(ErrorCode::Usage, "override '" + std::string(assignment) + "' is not key=value");
    }
    set(std::string(io::trim(assignment.substr(0, eq))), std::string(io::trim(assignment.substr(eq + 1))));
  }

  void set(std::string key, std::string value) { values_[std::move(key)] = std::move(value); }
  void erase(const std::string& key) { values_.erase(key); }
  bool has(const std::string& key) const { return values_.contains(key); }

  std::optional<std::string> get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }
  std::string get_or(const std::string& key, std::string fallback) const { return get(key).value_or(std::move(fallback)); }

  std::optional<double> get_double(const std::string& key) const {
    auto v = get(key);
    if (!v) return std::nullopt;
    auto d = io::parse_double(*v);
    if (!d) fail(ErrorCode::Config, key + ": '" + *v + "' is not a number");
    return d;
  }

  std::optional<long long> get_int(const std::string& key) const {
    auto v = get(key);
    if (!v) return std::nullopt;
    auto i = io::parse_int(*v);
    if (!i) fail(ErrorCode::Config, key + ": '" + *v + "' is not an integer");
    return i;
  }

  std::optional<bool> get_bool(const std::string& key) const {
    auto v = get(key);
    if (!v) return std::nullopt;
    if (*v == "true" || *v == "yes" || *v == "1" || *v == "on") return true;
    if (*v == "false" || *v == "no" || *v == "0" || *v == "off") return false;
    fail(ErrorCode::Config, key + ": '" + *v + "' is not a boolean");
  }

  std::optional<std::vector<std::string>> get_list(const std::string& key) const {
    auto v = get(key);
    if (!v) return std::nullopt;
    std::vector<std::string> out;
    for (const auto& item : io::split(*v, ','))
      if (auto t = io::trim(item); !t.empty()) out.emplace_back(t);
    return out;
  }

  /// Fails on any key outside `known`.
  void require_known(const std::set<std::string>& known) const {
    for (const auto& [k, v] : values_)
      if (!known.contains(k)) fail(ErrorCode::Config, "unknown config key '" + k + "'");
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  /// Sorted "key = value" lines; stable input for hashing.
  std::string canonical(const std::set<std::string>& exclude = {}) const {
    std::string out;
    for (const auto& [k, v] : values_) {
      if (exclude.contains(k)) continue;
      out += k + " = " + v + "\n";
    }
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

/// Parses seed lists such as "0-49", "1, 5, 9" or "0-9, 20-29"; whitespace
/// also separates items so a seed-list file can hold one seed per line.
inline std::vector<std::int64_t> parse_seed_list(std::string_view text) {
  std::string norm(text);
  std::replace_if(norm.begin(), norm.end(), [](char c) { return c == ',' || c == '\n' || c == '\r' || c == '\t'; }, ' ');
  std::vector<std::int64_t> seeds;
  for (const auto& item : io::split(norm, ' ')) {
    const auto t = io::trim(item);
    if (t.empty()) continue;
    const auto dash = t.find('-', 1);
    if (dash != std::string_view::npos) {
      auto lo = io::parse_int(t.substr(0, dash));
      auto hi = io::parse_int(t.substr(dash + 1));
      if (!lo || !hi || *hi < *lo) fail(ErrorCode::Config, "bad seed range '" + std::string(t) + "'");
      if (*hi - *lo > 1000000) fail(ErrorCode::Config, "seed range '" + std::string(t) + "' is too large");
      for (auto s = *lo; s <= *hi; ++s) seeds.push_back(s);
    } else {
      auto s = io::parse_int(t);
      if (!s) fail(ErrorCode::Config, "bad seed '" + std::string(t) + "'");
      seeds.push_back(*s);
    }
  }
  if (seeds.empty()) fail(ErrorCode::Config, "seed list is empty");
  std::set<std::int64_t> distinct(seeds.begin(), seeds.end());
  if (distinct.size() != seeds.size()) fail(ErrorCode::Config, "seed list has duplicates");
  return seeds;
}

}  // namespace pplad

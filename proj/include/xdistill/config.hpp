// Copyright 2026 The xdistill Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xdistill/errors.hpp"
#include "xdistill/io.hpp"

namespace xdistill {

// INI-style configuration: `[section]` headers, `key = value` entries,
// `#`/`;` comments. Lists are comma separated. See docs/config.md.
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text, const std::string& origin = "<string>") {
    ConfigFile cfg;
    cfg.raw_ = text;
    std::string section;
    int lineno = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t eol = text.find('\n', pos);
      std::string line = text.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
      pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
      ++lineno;
      // '#' comments anywhere; ';' comments only lead a line, since ';'
      // separates coordinate pairs in values
      std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty() || line.front() == ';') continue;
      if (line.front() == '[') {
        if (line.back() != ']' || line.size() < 3) {
          throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
        }
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      std::size_t eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      }
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty()) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      }
      cfg.values_[section + "." + key] = value;
    }
    return cfg;
  }

  static ConfigFile load(const std::string& path) {
    std::string text;
    try {
      text = read_file(path);
    } catch (const MissingPrerequisite&) {
      throw ConfigError("config file not found: " + path);
    }
    return parse(text, path);
  }

  bool has(const std::string& section, const std::string& key) const {
    return values_.count(section + "." + key) > 0;
  }

  std::string get_string(const std::string& section, const std::string& key,
                         std::optional<std::string> fallback = {}) const {
    auto it = values_.find(section + "." + key);
    if (it != values_.end()) return it->second;
    if (fallback) return *fallback;
    throw ConfigError("missing config key [" + section + "] " + key);
  }

  double get_double(const std::string& section, const std::string& key,
                    std::optional<double> fallback = {}) const {
    auto it = values_.find(section + "." + key);
    if (it == values_.end()) {
      if (fallback) return *fallback;
      throw ConfigError("missing config key [" + section + "] " + key);
    }
    return to_double(it->second, section, key);
  }

  long get_long(const std::string& section, const std::string& key,
                std::optional<long> fallback = {}) const {
    auto it = values_.find(section + "." + key);
    if (it == values_.end()) {
      if (fallback) return *fallback;
      throw ConfigError("missing config key [" + section + "] " + key);
    }
    char* end = nullptr;
    long v = std::strtol(it->second.c_str(), &end, 10);
    if (end == it->second.c_str() || *end != '\0') {
      throw ConfigError("config key [" + section + "] " + key + ": not an integer: " + it->second);
    }
    return v;
  }

  int get_int(const std::string& section, const std::string& key,
              std::optional<int> fallback = {}) const {
    return static_cast<int>(get_long(section, key,
                                     fallback ? std::optional<long>(*fallback) : std::nullopt));
  }

  bool get_bool(const std::string& section, const std::string& key,
                std::optional<bool> fallback = {}) const {
    auto it = values_.find(section + "." + key);
    if (it == values_.end()) {
      if (fallback) return *fallback;
      throw ConfigError("missing config key [" + section + "] " + key);
    }
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key [" + section + "] " + key + ": not a boolean: " + v);
  }

  std::vector<double> get_double_list(const std::string& section, const std::string& key,
                                      std::optional<std::vector<double>> fallback = {}) const {
    auto it = values_.find(section + "." + key);
    if (it == values_.end()) {
      if (fallback) return *fallback;
      throw ConfigError("missing config key [" + section + "] " + key);
    }
    std::vector<double> out;
    for (const std::string& item : split(it->second, ',')) {
      out.push_back(to_double(trim(item), section, key));
    }
    return out;
  }

  std::vector<int> get_int_list(const std::string& section, const std::string& key,
                                std::optional<std::vector<int>> fallback = {}) const {
    std::vector<int> out;
    if (!has(section, key)) {
      if (fallback) return *fallback;
      throw ConfigError("missing config key [" + section + "] " + key);
    }
    for (double v : get_double_list(section, key)) out.push_back(static_cast<int>(v));
    return out;
  }

  std::vector<std::string> get_string_list(const std::string& section, const std::string& key,
                                           std::optional<std::vector<std::string>> fallback = {}) const {
    auto it = values_.find(section + "." + key);
    if (it == values_.end()) {
      if (fallback) return *fallback;
      throw ConfigError("missing config key [" + section + "] " + key);
    }
    std::vector<std::string> out;
    for (const std::string& item : split(it->second, ',')) out.push_back(trim(item));
    return out;
  }

  // `x1,y1; x2,y2; ...`
  std::vector<std::pair<double, double>> get_point_list(const std::string& section,
                                                        const std::string& key) const {
    std::vector<std::pair<double, double>> out;
    if (!has(section, key)) return out;
    for (const std::string& pair : split(get_string(section, key), ';')) {
      std::vector<std::string> xy = split(pair, ',');
      if (xy.size() != 2) {
        throw ConfigError("config key [" + section + "] " + key + ": expected x,y pairs");
      }
      out.emplace_back(to_double(trim(xy[0]), section, key), to_double(trim(xy[1]), section, key));
    }
    return out;
  }

  const std::string& raw_text() const { return raw_; }
  std::uint64_t hash() const { return fnv1a64(raw_); }

 private:
  static std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  static std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
      std::size_t at = s.find(sep, start);
      out.push_back(s.substr(start, at == std::string::npos ? std::string::npos : at - start));
      if (at == std::string::npos) break;
      start = at + 1;
    }
    return out;
  }

  static double to_double(const std::string& s, const std::string& section, const std::string& key) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') {
      throw ConfigError("config key [" + section + "] " + key + ": not a number: " + s);
    }
    return v;
  }

  std::map<std::string, std::string> values_;
  std::string raw_;
};

}  // namespace xdistill

#pragma once

// Flat key-value text: `key = value` lines, optional `[section]` headers that
// prefix following keys as `section.key`, `#` comments, optional double quotes
// around values.

#include <charconv>
#include <cstdint>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gnli/error.hpp"

namespace gnli {

class KeyValues {
 public:
  static KeyValues parse(std::istream& in, std::string_view source = "<config>") {
    KeyValues kv;
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string_view s = trim(strip_comment(line));
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']') throw ConfigError(where(source, line_no) + "unterminated section header");
        section = std::string(trim(s.substr(1, s.size() - 2)));
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string_view::npos) throw ConfigError(where(source, line_no) + "expected key = value");
      const std::string_view key = trim(s.substr(0, eq));
      if (key.empty()) throw ConfigError(where(source, line_no) + "empty key");
      kv.set(section.empty() ? std::string(key) : section + "." + std::string(key), unquote(trim(s.substr(eq + 1))));
    }
    return kv;
  }

  static KeyValues parse(std::string_view text) {
    std::istringstream in{std::string(text)};
    return parse(in);
  }

  /// Applies a `key=value` override such as `model.hidden=8`.
  void apply_override(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || trim(assignment.substr(0, eq)).empty())
      throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
    set(std::string(trim(assignment.substr(0, eq))), unquote(trim(assignment.substr(eq + 1))));
  }

  void set(std::string key, std::string value) { values_[std::move(key)] = std::move(value); }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, std::string fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }
  template <class T>
  T get_number(const std::string& key, T fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return to_number<T>(key, it->second);
  }
  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + it->second + "'");
  }
  template <class T>
  std::vector<T> get_list(const std::string& key, std::vector<T> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::string_view s = trim(it->second);
    if (!s.empty() && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
    std::vector<T> out;
    std::size_t start = 0;
    while (start <= s.size()) {
      const auto comma = s.find(',', start);
      const std::string_view item = trim(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start));
      if (!item.empty()) out.push_back(to_number<T>(key, std::string(item)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    return out;
  }

  /// Unsectioned keys first, then each section in key order.
  std::string to_text() const {
    std::ostringstream os;
    std::string current;
    bool first = true;
    std::vector<std::pair<std::string, std::string>> plain, sectioned;
    for (const auto& [k, v] : values_) (k.find('.') == std::string::npos ? plain : sectioned).emplace_back(k, v);
    for (const auto& [k, v] : plain) os << k << " = " << v << '\n';
    for (const auto& [k, v] : sectioned) {
      const auto dot = k.find('.');
      const std::string sec = k.substr(0, dot);
      if (first || sec != current) {
        os << (plain.empty() && first ? "" : "\n") << '[' << sec << "]\n";
        current = sec;
        first = false;
      }
      os << k.substr(dot + 1) << " = " << v << '\n';
    }
    return os.str();
  }

  bool operator==(const KeyValues&) const = default;

 private:
  template <class T>
  static T to_number(const std::string& key, const std::string& text) {
    T value{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size())
      throw ConfigError(key + ": '" + text + "' is not a valid number");
    return value;
  }
  static std::string_view strip_comment(std::string_view s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') quoted = !quoted;
      if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
  }
  static std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
  }
  static std::string unquote(std::string_view s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return std::string(s);
  }
  static std::string where(std::string_view source, std::size_t line) {
    return std::string(source) + ":" + std::to_string(line) + ": ";
  }

  std::map<std::string, std::string> values_;
};

}  // namespace gnli

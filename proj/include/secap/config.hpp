#pragma once

// key = value text configs. '#' starts a comment; blank lines are ignored.

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "secap/tensor.hpp"

namespace secap {

class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems) : Error(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s = "config invalid";
    for (const auto& m : p) s += "\n  " + m;
    return s;
  }
  std::vector<std::string> problems_;
};

struct KeyValue {
  std::string key, value;
  std::size_t line = 0;
};

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<KeyValue> parse_key_values(const std::string& text) {
  std::vector<KeyValue> out;
  std::vector<std::string> problems;
  std::istringstream in(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back("line " + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    KeyValue kv{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno};
    if (kv.key.empty()) {
      problems.push_back("line " + std::to_string(lineno) + ": empty key");
      continue;
    }
    out.push_back(std::move(kv));
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return out;
}

namespace detail {

inline std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
inline std::string format_value(bool v) { return v ? "true" : "false"; }
inline std::string format_value(const std::string& v) { return v; }
template <class T>
  requires std::is_integral_v<T>
inline std::string format_value(T v) {
  return std::to_string(v);
}

inline bool parse_value(const std::string& s, double& out) {
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size();
}
inline bool parse_value(const std::string& s, bool& out) {
  if (s == "true" || s == "1") return out = true, true;
  if (s == "false" || s == "0") return out = false, true;
  return false;
}
inline bool parse_value(const std::string& s, std::string& out) {
  out = s;
  return true;
}
template <class T>
  requires std::is_integral_v<T>
inline bool parse_value(const std::string& s, T& out) {
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

}  // namespace detail

/// Named references into a config struct, in a fixed order.
class FieldTable {
 public:
  template <class T>
  void bind(std::string key, T& ref) {
    fields_.push_back({std::move(key), [&ref](const std::string& s) { return detail::parse_value(s, ref); },
                       [&ref] { return detail::format_value(ref); }});
  }

  bool has(const std::string& key) const {
    for (const auto& f : fields_)
      if (f.key == key) return true;
    return false;
  }

  /// Applies every entry; unknown keys and malformed values are all reported.
  /// With allow_unknown, keys not in this table are skipped.
  void apply(const std::vector<KeyValue>& kvs, bool allow_unknown = false) {
    std::vector<std::string> problems;
    for (const auto& kv : kvs) {
      const Field* f = nullptr;
      for (const auto& x : fields_)
        if (x.key == kv.key) f = &x;
      if (!f) {
        if (!allow_unknown) problems.push_back("line " + std::to_string(kv.line) + ": unknown key '" + kv.key + "'");
        continue;
      }
      if (!f->set(kv.value))
        problems.push_back("line " + std::to_string(kv.line) + ": bad value '" + kv.value + "' for '" + kv.key + "'");
    }
    if (!problems.empty()) throw ConfigError(std::move(problems));
  }

  std::string dump() const {
    std::string out;
    for (const auto& f : fields_) out += f.key + " = " + f.get() + "\n";
    return out;
  }

 private:
  struct Field {
    std::string key;
    std::function<bool(const std::string&)> set;
    std::function<std::string()> get;
  };
  std::vector<Field> fields_;
};

}  // namespace secap

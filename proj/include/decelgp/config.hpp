#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace decelgp {

/// Flat `key = value` configuration shared by the generator, the optimizer
/// and the CLI. Blank lines and lines starting with '#' are ignored.
class FlatConfig {
 public:
  static FlatConfig parse(std::string_view text);
  static FlatConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::string get_string(const std::string& key, std::string fallback) const;

  /// Canonical `key=value\n` lines in key order.
  std::string canonical() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace decelgp

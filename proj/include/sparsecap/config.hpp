#pragma once

#include <map>
#include <string>

namespace sparsecap {

/// Flat `key = value` settings. Blank lines and text after '#' are ignored.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;
  static KeyValueConfig parse(const std::string& text);
  /// Throws ValidationError when the file cannot be read or a line is malformed.
  static KeyValueConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  const std::map<std::string, std::string>& values() const { return values_; }
  /// Canonical text: sorted `key = value` lines.
  std::string to_string() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace sparsecap

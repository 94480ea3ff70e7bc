#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sensorgrad/regression.hpp"

namespace sensorgrad {

/// Problem in a configuration file. `line` is 0 when the problem concerns a
/// key that is absent.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& source, int line, const std::string& key, const std::string& message);
  int line() const { return line_; }
  const std::string& key() const { return key_; }

 private:
  int line_;
  std::string key_;
};

/// Flat `section.key = value` configuration. Values are typed on access:
///   real      1.5, -2e-3, pi, pi/4, 0.5*pi, 2*(1 + 0.5)
///   integer   12
///   boolean   true | false
///   string    word or "quoted text"
///   vector    [1, 2, pi/4]
///   matrix    [[1, 0], [0, 4]] or diag(1, 4) or identity(9)*0.01
///   list      [ignore_sensors, with_encoding(1)]
/// Lines starting with '#' are comments.
class Config {
 public:
  static Config parse(const std::string& text, const std::string& source = "<config>");
  static Config load(const std::string& path);

  const std::string& source() const { return source_; }
  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  double real(const std::string& key) const;
  double real(const std::string& key, double fallback) const;
  std::int64_t integer(const std::string& key) const;
  std::int64_t integer(const std::string& key, std::int64_t fallback) const;
  /// Non-negative integer.
  std::size_t count(const std::string& key) const;
  std::size_t count(const std::string& key, std::size_t fallback) const;
  bool boolean(const std::string& key, bool fallback) const;
  std::string string(const std::string& key) const;
  std::string string(const std::string& key, const std::string& fallback) const;
  Vector vector(const std::string& key) const;
  Vector vector(const std::string& key, const Vector& fallback) const;
  Matrix matrix(const std::string& key) const;
  Matrix matrix(const std::string& key, const Matrix& fallback) const;
  std::vector<std::string> strings(const std::string& key) const;
  std::vector<std::string> strings(const std::string& key, const std::vector<std::string>& fallback) const;

  /// Replaces or adds a value (used for command-line overrides).
  void set(const std::string& key, const std::string& value);

  /// Throws for the first key that no accessor has read.
  void reject_unused() const;

  /// Error attributed to `key`'s line.
  ConfigError error(const std::string& key, const std::string& message) const;

  /// Sorted `key = value` lines with whitespace normalized.
  std::string canonical_text(const std::set<std::string>& excluded = {}) const;
  /// FNV-1a 64 of canonical_text(excluded), as 16 hex digits.
  std::string hash(const std::set<std::string>& excluded = {}) const;

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };
  const Entry& entry(const std::string& key) const;
  const Entry* find(const std::string& key) const;

  std::string source_;
  std::map<std::string, Entry> entries_;
  mutable std::set<std::string> used_;
};

}  // namespace sensorgrad

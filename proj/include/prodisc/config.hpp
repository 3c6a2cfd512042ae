#pragma once

// Line-based `key = value` configuration files. Unknown keys are an error so
// typos surface instead of silently using defaults.

#include <cstdint>
#include <map>
#include <set>
#include <string>

#include "prodisc/errors.hpp"

namespace prodisc {

// Blank lines and lines starting with '#' are skipped; later duplicates win.
std::map<std::string, std::string> parse_key_value_file(const std::string& path);

// Typed access over a key/value map; finish() rejects any key never consumed.
class ConfigMap {
 public:
  explicit ConfigMap(std::map<std::string, std::string> kv, std::string source)
      : kv_(std::move(kv)), source_(std::move(source)) {}

  void set(const std::string& key, std::string value) { kv_[key] = std::move(value); }

  std::string take_string(const std::string& key, const std::string& fallback);
  int take_int(const std::string& key, int fallback);
  uint64_t take_u64(const std::string& key, uint64_t fallback);
  double take_double(const std::string& key, double fallback);

  void finish() const;  // throws ConfigError on unconsumed (unknown) keys

 private:
  const std::string* find(const std::string& key);
  std::map<std::string, std::string> kv_;
  std::set<std::string> consumed_;
  std::string source_;
};

}  // namespace prodisc

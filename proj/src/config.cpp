#include "prodisc/config.hpp"

#include <fstream>
#include <stdexcept>

namespace prodisc {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

std::map<std::string, std::string> parse_key_value_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError(IoError::Kind::open_failed, path + ": cannot open config file");
  }
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected `key = value`, got '" + stripped + "'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    }
    kv[key] = value;
  }
  return kv;
}

const std::string* ConfigMap::find(const std::string& key) {
  const auto it = kv_.find(key);
  if (it == kv_.end()) return nullptr;
  consumed_.insert(key);
  return &it->second;
}

std::string ConfigMap::take_string(const std::string& key, const std::string& fallback) {
  const auto* v = find(key);
  return v ? *v : fallback;
}

int ConfigMap::take_int(const std::string& key, int fallback) {
  const auto* v = find(key);
  if (!v) return fallback;
  try {
    size_t used = 0;
    const int parsed = std::stoi(*v, &used);
    if (used != v->size()) throw std::invalid_argument("");
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError(source_ + ": key '" + key + "': not an integer: '" + *v + "'");
  }
}

uint64_t ConfigMap::take_u64(const std::string& key, uint64_t fallback) {
  const auto* v = find(key);
  if (!v) return fallback;
  try {
    size_t used = 0;
    const auto parsed = std::stoull(*v, &used);
    if (used != v->size()) throw std::invalid_argument("");
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError(source_ + ": key '" + key + "': not an unsigned integer: '" +
                      *v + "'");
  }
}

double ConfigMap::take_double(const std::string& key, double fallback) {
  const auto* v = find(key);
  if (!v) return fallback;
  try {
    size_t used = 0;
    const double parsed = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument("");
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError(source_ + ": key '" + key + "': not a number: '" + *v + "'");
  }
}

void ConfigMap::finish() const {
  std::string unknown;
  for (const auto& [key, value] : kv_) {
    if (!consumed_.count(key)) {
      if (!unknown.empty()) unknown += ", ";
      unknown += "'" + key + "'";
    }
  }
  if (!unknown.empty()) {
    throw ConfigError(source_ + ": unknown keys: " + unknown);
  }
}

}  // namespace prodisc

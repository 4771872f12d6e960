#include "boxlm/config.hpp"

#include <fstream>
#include <stdexcept>

namespace boxlm {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

FlatConfig FlatConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  FlatConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    cfg.parse_line(line, path + ":" + std::to_string(lineno));
  }
  return cfg;
}

void FlatConfig::parse_line(const std::string& raw, const std::string& where) {
  std::string line = raw;
  size_t hash = line.find('#');
  if (hash != std::string::npos) line = line.substr(0, hash);
  line = trim(line);
  if (line.empty()) return;
  size_t eq = line.find('=');
  if (eq == std::string::npos)
    throw std::runtime_error("config line without '=' at " + where + ": " + raw);
  std::string key = trim(line.substr(0, eq));
  std::string value = trim(line.substr(eq + 1));
  if (key.empty()) throw std::runtime_error("config line with empty key at " + where);
  values_[key] = value;
}

std::string FlatConfig::get_str(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int64_t FlatConfig::get_int(const std::string& key, int64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  size_t pos = 0;
  int64_t v = std::stoll(it->second, &pos);
  if (pos != it->second.size())
    throw std::runtime_error("config key " + key + ": not an integer: " + it->second);
  return v;
}

double FlatConfig::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  size_t pos = 0;
  double v = std::stod(it->second, &pos);
  if (pos != it->second.size())
    throw std::runtime_error("config key " + key + ": not a number: " + it->second);
  return v;
}

bool FlatConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::runtime_error("config key " + key + ": not a boolean: " + v);
}

void FlatConfig::apply_overrides(const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    size_t eq = o.find('=');
    if (eq == std::string::npos || trim(o.substr(0, eq)).empty())
      throw std::runtime_error("override must look like key=value: " + o);
    values_[trim(o.substr(0, eq))] = trim(o.substr(eq + 1));
  }
}

}  // namespace boxlm

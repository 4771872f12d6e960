#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace boxlm {

// Flat configuration: dotted keys to string values, e.g. "model.d_model = 64".
// Files hold one "key = value" pair per line; '#' starts a comment. Later
// assignments win, which is how command-line overrides are merged.
class FlatConfig {
 public:
  FlatConfig() = default;

  static FlatConfig from_file(const std::string& path);
  void parse_line(const std::string& line, const std::string& where);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // "key=value" fragments from the command line; malformed input throws.
  void apply_overrides(const std::vector<std::string>& overrides);

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

std::string trim(const std::string& s);

}  // namespace boxlm

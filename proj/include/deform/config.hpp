#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "deform/tensor.hpp"

namespace deform {

// Flat key = value text config. Lines starting with '#' and blank lines are
// ignored. Unknown keys are rejected by the consumers, not here.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_text(const std::string& text) {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw NumericError("config: line " + std::to_string(lineno) + " is not 'key = value'");
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      if (key.empty()) throw NumericError("config: empty key on line " + std::to_string(lineno));
      cfg.values_[key] = val;
    }
    return cfg;
  }

  static KeyValueConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NumericError("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str());
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& dflt) const {
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  double get_num(const std::string& key, double dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw NumericError("config: key '" + key + "' has non-numeric value '" + it->second + "'");
    }
  }

  int64_t get_int(const std::string& key, int64_t dflt) const {
    return static_cast<int64_t>(get_num(key, static_cast<double>(dflt)));
  }

  bool get_bool(const std::string& key, bool dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw NumericError("config: key '" + key + "' is not a boolean");
  }

  void set(const std::string& key, const std::string& val) { values_[key] = val; }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace deform

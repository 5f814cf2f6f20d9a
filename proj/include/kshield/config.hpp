#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace kshield {

// Flat key=value configuration grouped by [section] headers. '#' and ';'
// start comments. No nesting, no quoting; values run to end of line.
class ConfigDocument {
 public:
  static ConfigDocument parse_string(const std::string& text, const std::string& origin = "<string>") {
    ConfigDocument doc;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const size_t comment = line.find_first_of("#;");
      if (comment != std::string::npos) line.erase(comment);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']' || line.size() < 3) {
          throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": malformed section header");
        }
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const size_t eq = line.find('=');
      if (eq == std::string::npos) {
        throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": expected key = value");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) {
        throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": empty key");
      }
      const std::string full = section.empty() ? key : section + "." + key;
      if (!doc.values_.emplace(full, value).second) {
        throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": duplicate key '" + full + "'");
      }
    }
    return doc;
  }

  static ConfigDocument parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      size_t pos = 0;
      const long long v = std::stoll(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw std::invalid_argument("config key '" + key + "': expected integer, got '" + it->second + "'");
    }
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw std::invalid_argument("config key '" + key + "': expected number, got '" + it->second + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
    if (it->second == "false" || it->second == "0" || it->second == "no") return false;
    throw std::invalid_argument("config key '" + key + "': expected boolean, got '" + it->second + "'");
  }

  // Comma-separated list.
  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::string> out;
    std::string cur;
    for (char c : it->second) {
      if (c == ',') {
        out.push_back(trim(cur));
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
    return out;
  }

  // Unknown keys are rejected by name: configs never silently ignore typos.
  void reject_unknown(const std::set<std::string>& known) const {
    for (const auto& [key, value] : values_) {
      if (!known.count(key)) throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace kshield

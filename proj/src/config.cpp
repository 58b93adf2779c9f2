#include "lopt/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace lopt {

static std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

Config Config::from_string(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    lineno++;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCategory::Config, "bad_line",
                  "config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw Error(ErrorCategory::Config, "bad_line",
                  "config line " + std::to_string(lineno) + ": empty key");
    c.kv_[key] = value;
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f)
    throw Error(ErrorCategory::Config, "missing_file", "config: cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return from_string(ss.str());
}

std::string Config::get_str(const std::string& key, const std::string& dflt) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? dflt : it->second;
}

int64_t Config::get_int(const std::string& key, int64_t dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  int64_t v = 0;
  auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
  if (ec != std::errc() || p != it->second.data() + it->second.size())
    throw Error(ErrorCategory::Config, "bad_int", "config: " + key + " = '" + it->second + "'");
  return v;
}

double Config::get_double(const std::string& key, double dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCategory::Config, "bad_double", "config: " + key + " = '" + it->second + "'");
  }
}

bool Config::get_bool(const std::string& key, bool dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
  if (it->second == "false" || it->second == "0" || it->second == "no") return false;
  throw Error(ErrorCategory::Config, "bad_bool", "config: " + key + " = '" + it->second + "'");
}

std::vector<double> Config::get_doubles(const std::string& key) const {
  std::vector<double> out;
  auto it = kv_.find(key);
  if (it == kv_.end()) return out;
  std::istringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error(ErrorCategory::Config, "bad_double", "config: " + key + " item '" + item + "'");
    }
  }
  return out;
}

std::vector<std::string> Config::get_strs(const std::string& key) const {
  std::vector<std::string> out;
  auto it = kv_.find(key);
  if (it == kv_.end()) return out;
  std::istringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void Config::validate(const std::vector<std::string>& known_keys) const {
  for (const auto& [key, value] : kv_) {
    bool ok = std::find(known_keys.begin(), known_keys.end(), key) != known_keys.end();
    if (!ok)
      throw Error(ErrorCategory::Config, "unknown_key", "config: unknown key '" + key + "'");
  }
}

}  // namespace lopt

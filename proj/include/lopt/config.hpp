#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lopt/errors.hpp"

namespace lopt {

// Flat `key = value` config file: one pair per line, '#' starts a comment,
// blank lines ignored. Keys are dotted lowercase (e.g. data.synthetic).
class Config {
 public:
  Config() = default;
  static Config load(const std::filesystem::path& path);
  static Config from_string(const std::string& text);

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string get_str(const std::string& key, const std::string& dflt) const;
  int64_t get_int(const std::string& key, int64_t dflt) const;
  double get_double(const std::string& key, double dflt) const;
  bool get_bool(const std::string& key, bool dflt) const;
  std::vector<double> get_doubles(const std::string& key) const;  // comma-separated
  std::vector<std::string> get_strs(const std::string& key) const;

  // Every key must match the registry (exact or listed prefix); typos fail
  // loudly instead of silently running defaults.
  void validate(const std::vector<std::string>& known_keys) const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace lopt

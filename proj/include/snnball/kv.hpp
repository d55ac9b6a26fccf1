#pragma once

// Flat `key=value` text files used for dataset meta, training configs and
// device profiles. Blank lines and `#` comments are ignored.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace snnball {

class KeyValues {
 public:
  static KeyValues parse(std::istream& in, const std::string& source = "<stream>");
  static KeyValues load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  void write(std::ostream& out) const;

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  std::optional<std::string> get(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::string require(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::string source_ = "<memory>";
};

std::vector<std::string> split(const std::string& text, char sep);

/// Shortest text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace snnball

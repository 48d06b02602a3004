#pragma once

// Structured-text configuration: UTF-8, `key = value` per line, `[section]`
// headers. Keys are addressed as "section.key". Reading is delegated to
// Boost.PropertyTree's INI parser; writing is done in a fixed order so that
// artifacts are byte-reproducible.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace spmeid {

class KeyValueFile {
 public:
  KeyValueFile() = default;

  static KeyValueFile load(const std::filesystem::path& path);
  static KeyValueFile parse(const std::string& text, const std::string& origin = "<string>");

  bool contains(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;

  std::optional<std::string> find(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  long long get_int_or(const std::string& key, long long fallback) const;

  /// Insertion-ordered setters used when writing artifacts.
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  void set(const std::string& key, long long value);
  void set(const std::string& key, const std::vector<double>& values);

  /// Overrides every key present in `other`.
  void merge(const KeyValueFile& other);

  std::vector<std::string> keys() const { return order_; }

  /// Serialises with sections grouped in first-seen order.
  std::string to_string() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
  std::string origin_;
};

/// Round-trip exact decimal representation of a double.
std::string format_exact(double value);

/// 64-bit FNV-1a hash rendered as 16 hex digits.
std::string fingerprint(std::string_view bytes);
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::vector<double> parse_doubles(const std::string& csv, const std::string& context);

}  // namespace spmeid

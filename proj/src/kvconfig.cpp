#include "spmeid/kvconfig.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "spmeid/error.hpp"

namespace spmeid {

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

void flatten(const boost::property_tree::ptree& tree, const std::string& prefix,
             KeyValueFile& out) {
  for (const auto& [key, child] : tree) {
    const std::string full = prefix.empty() ? key : prefix + "." + key;
    if (child.empty()) {
      out.set(full, trim(child.data()));
    } else {
      flatten(child, full, out);
    }
  }
}

}  // namespace

KeyValueFile KeyValueFile::parse(const std::string& text, const std::string& origin) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(fmt::format("{}: {}", origin, e.message()));
  }
  KeyValueFile out;
  out.origin_ = origin;
  flatten(tree, "", out);
  return out;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

bool KeyValueFile::contains(const std::string& key) const { return values_.count(key) != 0; }

std::optional<std::string> KeyValueFile::find(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValueFile::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    throw ConfigError(fmt::format("{}: missing key '{}'", origin_.empty() ? "config" : origin_, key));
  }
  return it->second;
}

double KeyValueFile::get_double(const std::string& key) const {
  const std::string raw = get_string(key);
  char* end = nullptr;
  const double v = std::strtod(raw.c_str(), &end);
  if (end == raw.c_str() || *end != '\0') {
    throw ConfigError(fmt::format("key '{}': '{}' is not a number", key, raw));
  }
  return v;
}

long long KeyValueFile::get_int(const std::string& key) const {
  const std::string raw = get_string(key);
  char* end = nullptr;
  const long long v = std::strtoll(raw.c_str(), &end, 10);
  if (end == raw.c_str() || *end != '\0') {
    throw ConfigError(fmt::format("key '{}': '{}' is not an integer", key, raw));
  }
  return v;
}

std::vector<double> KeyValueFile::get_doubles(const std::string& key) const {
  return parse_doubles(get_string(key), key);
}

double KeyValueFile::get_double_or(const std::string& key, double fallback) const {
  return contains(key) ? get_double(key) : fallback;
}

long long KeyValueFile::get_int_or(const std::string& key, long long fallback) const {
  return contains(key) ? get_int(key) : fallback;
}

void KeyValueFile::set(const std::string& key, const std::string& value) {
  if (values_.count(key) == 0) order_.push_back(key);
  values_[key] = value;
}

void KeyValueFile::set(const std::string& key, double value) { set(key, format_exact(value)); }

void KeyValueFile::set(const std::string& key, long long value) { set(key, std::to_string(value)); }

void KeyValueFile::set(const std::string& key, const std::vector<double>& values) {
  std::string joined;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) joined += ", ";
    joined += format_exact(values[i]);
  }
  set(key, joined);
}

void KeyValueFile::merge(const KeyValueFile& other) {
  for (const auto& key : other.order_) set(key, other.values_.at(key));
}

std::string KeyValueFile::to_string() const {
  // Group keys by section (text before the first dot), preserving first-seen order.
  std::vector<std::string> sections;
  std::map<std::string, std::vector<std::string>> members;
  for (const auto& key : order_) {
    const auto dot = key.find('.');
    const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
    if (members.count(section) == 0) sections.push_back(section);
    members[section].push_back(key);
  }
  std::string out;
  // Unsectioned keys must precede the first header to parse back correctly.
  if (members.count("")) {
    for (const auto& key : members[""]) out += key + " = " + values_.at(key) + "\n";
  }
  for (const auto& section : sections) {
    if (section.empty()) continue;
    if (!out.empty()) out += "\n";
    out += "[" + section + "]\n";
    for (const auto& key : members[section]) {
      out += key.substr(section.size() + 1) + " = " + values_.at(key) + "\n";
    }
  }
  return out;
}

void KeyValueFile::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << to_string();
}

std::string format_exact(double value) { return fmt::format("{}", value); }

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string fingerprint(std::string_view bytes) { return fmt::format("{:016x}", fnv1a(bytes)); }

std::vector<double> parse_doubles(const std::string& csv, const std::string& context) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (end == item.c_str() || *end != '\0') {
      throw ConfigError(fmt::format("{}: '{}' is not a number", context, item));
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace spmeid

#pragma once

// Reproducibility header embedded in every artifact.

#include <cstdint>
#include <string>
#include <vector>

#include "spmeid/kvconfig.hpp"

namespace spmeid {

inline constexpr const char* kVersion = "0.1.0";

struct Provenance {
  std::string tool;          // producing subcommand or module
  std::uint64_t seed = 0;
  std::string config_fingerprint;

  /// "key=value" lines, written as comments in CSVs and as keys in text files.
  std::vector<std::string> lines() const;
  void write(KeyValueFile& kv) const;  // section [provenance]
};

/// Derives an independent stream seed from a master seed and a path of ids.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

}  // namespace spmeid

#include "spmeid/provenance.hpp"

#include <fmt/format.h>

namespace spmeid {

std::vector<std::string> Provenance::lines() const {
  return {fmt::format("version={}", kVersion), fmt::format("tool={}", tool), fmt::format("seed={}", seed),
          fmt::format("config_fingerprint={}", config_fingerprint)};
}

void Provenance::write(KeyValueFile& kv) const {
  kv.set("provenance.version", std::string(kVersion));
  kv.set("provenance.tool", tool);
  kv.set("provenance.seed", std::to_string(seed));
  kv.set("provenance.config_fingerprint", config_fingerprint);
}

namespace {

// SplitMix64 finaliser.
std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix(master);
  for (std::uint64_t p : path) h = mix(h ^ mix(p + 0x632be59bd9b4e019ULL));
  return h;
}

}  // namespace spmeid

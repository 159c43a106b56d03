#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace conpvp {

// splitmix64 finalizer; used to derive independent RNG substreams from one seed.
constexpr uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + stream * 0x9E3779B97F4A7C15ULL + 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

uint64_t fnv1a64(std::string_view data);
uint64_t fnv1a64_file(const std::string& path);
std::string to_hex(uint64_t value);

void log_warn(const std::string& message);
void log_info(const std::string& message);

}  // namespace conpvp

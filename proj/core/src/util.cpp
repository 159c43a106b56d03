#include "conpvp/util.hpp"

#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace conpvp {

uint64_t fnv1a64(std::string_view data) {
  uint64_t hash = 0xCBF29CE484222325ULL;
  for (unsigned char c : data) {
    hash ^= c;
    hash *= 0x100000001B3ULL;
  }
  return hash;
}

uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open file for hashing: " + path);
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return fnv1a64(buffer.str());
}

std::string to_hex(uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[value & 0xF];
    value >>= 4;
  }
  return out;
}

void log_warn(const std::string& message) {
  std::cerr << "[warn] " << message << "\n";
}

void log_info(const std::string& message) {
  std::cerr << "[info] " << message << "\n";
}

}  // namespace conpvp

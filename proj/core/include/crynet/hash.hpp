#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace crynet {

/// 64-bit FNV-1a. Used for config digests that must be stable across runs,
/// compilers and platforms, which std::hash does not promise.
constexpr std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : bytes) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string to_hex(std::uint64_t value);

inline std::string digest(std::string_view bytes) { return to_hex(fnv1a64(bytes)); }

/// Version string stamped into every artifact the tools write.
std::string_view library_version();

}  // namespace crynet

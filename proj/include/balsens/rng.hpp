#pragma once

#include <cstdint>
#include <random>

namespace balsens {

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Seed of substream `index` on channel `stream` below a root seed. Results
/// depend only on the three integers, never on scheduling.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(root) ^ stream) + index);
}

inline Engine make_engine(std::uint64_t root, std::uint64_t stream, std::uint64_t index) {
  return Engine(derive_seed(root, stream, index));
}

}  // namespace balsens

#pragma once

#include <cstdint>
#include <random>

namespace rpinn {

// Named sub-streams derived from one user seed, so that e.g. measurement
// noise and collocation-point placement never share random numbers.
enum class Stream : std::uint64_t {
  measurement = 1,
  locations = 2,
  field = 3,
  noise = 4,
  init = 5,
  chain = 6,
  particles = 7,
};

inline std::mt19937_64 make_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

}  // namespace rpinn

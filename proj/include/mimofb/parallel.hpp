#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

#include <omp.h>

namespace mimofb {

inline int max_threads() { return omp_get_max_threads(); }

/// Independent RNG stream for (seed, index, salt). Streams do not depend on
/// the thread that consumes them, so parallel loops stay reproducible.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t index,
                                  std::uint64_t salt = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(salt),
                    static_cast<std::uint32_t>(salt >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace mimofb

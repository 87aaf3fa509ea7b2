#pragma once

#include <cstdint>
#include <random>

namespace heckcn {

/// Independent generator for (seed, stream), e.g. one stream per Monte Carlo replicate.
inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x5eedu};
    return std::mt19937_64(seq);
}

}  // namespace heckcn

#pragma once

#include <cstdint>
#include <random>

namespace coat {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; mixes a base seed with a stream tag so that
/// independent consumers (init, batching, attacks, ...) never share a stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) { return Rng(derive_seed(seed, stream)); }

// Stream tags.
namespace stream {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t batches = 2;
inline constexpr std::uint64_t attack = 3;
inline constexpr std::uint64_t penalty = 4;
inline constexpr std::uint64_t eval = 5;
inline constexpr std::uint64_t subsample = 6;
inline constexpr std::uint64_t augment = 7;
inline constexpr std::uint64_t synthetic = 8;
inline constexpr std::uint64_t analysis = 9;
}  // namespace stream

}  // namespace coat

#pragma once

#include <cstdint>
#include <random>

namespace baa {

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a base seed and a tag pair, so
/// shuffling, augmentation, dropout and initialisation never share draws.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index = 0) noexcept {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(base) ^ stream) ^ index);
}

namespace streams {
inline constexpr std::uint64_t split = 1;
inline constexpr std::uint64_t synth = 2;
inline constexpr std::uint64_t backbone_init = 3;
inline constexpr std::uint64_t head_init = 4;
inline constexpr std::uint64_t shuffle = 5;
inline constexpr std::uint64_t augment = 6;
inline constexpr std::uint64_t dropout = 7;
} // namespace streams

} // namespace baa

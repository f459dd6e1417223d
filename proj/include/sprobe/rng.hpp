#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace sprobe {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent, index-keyed streams.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::initializer_list<std::uint64_t> keys) noexcept {
    std::uint64_t h = 0x5a17e4c3b2d1f0a9ULL;
    for (auto k : keys) h = mix64(h ^ mix64(k));
    return h;
}

inline Rng make_rng(std::initializer_list<std::uint64_t> keys) { return Rng(derive_seed(keys)); }

}  // namespace sprobe

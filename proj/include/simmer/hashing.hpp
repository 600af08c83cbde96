#pragma once

#include <cstdint>
#include <string_view>

namespace simmer {

/// FNV-1a, 64-bit. Used for token bucketing and content digests.
constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = kFnvOffsetBasis) noexcept {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

/// SplitMix64 finalizer; a bijection on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Fixed seed mixed into every token hash so bucket assignment is stable
/// across runs and platforms.
constexpr std::uint64_t kTokenHashSeed = 0x53494d4d45523031ULL;  // "SIMMER01"

/// Token hash: mix64(FNV-1a(token) ^ seed).
constexpr std::uint64_t token_hash(std::string_view token) noexcept {
    return mix64(fnv1a64(token) ^ kTokenHashSeed);
}

/// Derives an independent stream seed from a run seed and a purpose tag.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) noexcept {
    return mix64(seed ^ fnv1a64(purpose));
}

}  // namespace simmer

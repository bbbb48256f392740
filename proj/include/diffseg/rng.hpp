#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace diffseg {

// FNV-1a over a byte string. Used for sample-id hashing and artifact hashes.
inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Independent deterministic stream for (seed, sample_id, stage). Sample order
// never matters: each sample derives its own generator.
inline std::mt19937_64 sample_rng(std::uint64_t seed, std::string_view sample_id,
                                  std::string_view stage) {
    std::uint64_t h = splitmix64(seed ^ fnv1a64(sample_id) ^ splitmix64(fnv1a64(stage)));
    return std::mt19937_64(h);
}

inline std::mt19937_64 stage_rng(std::uint64_t seed, std::string_view stage) {
    return std::mt19937_64(splitmix64(seed ^ fnv1a64(stage)));
}

// Fisher-Yates permutation of 0..n-1 with an explicit draw, so the result
// depends only on the generator stream, not on library internals.
inline std::vector<int> shuffle_indices(int n, std::mt19937_64& rng) {
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) {
        int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    return idx;
}

}  // namespace diffseg

#pragma once
// Counter-based seed derivation. Every random stream in the library is keyed
// by (master seed, purpose tag, counter) so that adding splits or bootstrap
// replications never reshuffles the earlier ones.

#include <cstdint>
#include <random>

namespace hetfx {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

enum class StreamTag : std::uint64_t {
    split = 1,
    cross_validation = 2,
    bootstrap_cates = 3,
    bootstrap_averages = 4,
    policy = 5,
    synth = 6,
    pseudo_starts = 7,
};

inline constexpr std::uint64_t derive_seed(std::uint64_t master, StreamTag tag, std::uint64_t counter = 0) {
    return splitmix64(splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(tag))) + counter);
}

inline Rng make_rng(std::uint64_t master, StreamTag tag, std::uint64_t counter = 0) {
    return Rng(derive_seed(master, tag, counter));
}

} // namespace hetfx

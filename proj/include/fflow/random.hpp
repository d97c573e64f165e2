#pragma once

// Seed derivation and normal sampling.
//
// Every random stream in the library is keyed by a 64-bit seed derived from a
// parent seed plus a purpose tag and/or integer indices. Derivation is a
// splitmix64 chain; tags are folded in through 64-bit FNV-1a. Changing one
// purpose (say, the embedding seed) never perturbs another (say, the data).

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>

namespace fflow {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t parent) noexcept { return parent; }

template <typename... Rest>
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag, Rest... rest) noexcept;

/// derive_seed(s, a, b, ...) == derive_seed(derive_seed(s, a), b, ...).
template <typename... Rest>
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t key, Rest... rest) noexcept {
    const std::uint64_t child = splitmix64(splitmix64(parent) ^ (key + 0x632be59bd9b4e019ULL));
    return derive_seed(child, rest...);
}

template <typename... Rest>
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag, Rest... rest) noexcept {
    return derive_seed(parent, fnv1a64(tag), rest...);
}

using Engine = boost::random::mt19937_64;

/// Standard normal sampler (ziggurat) bound to its own engine.
class NormalStream {
public:
    explicit NormalStream(std::uint64_t seed) : engine_(seed) {}

    double operator()() { return dist_(engine_); }

    Engine &engine() noexcept { return engine_; }

private:
    Engine engine_;
    boost::random::normal_distribution<double> dist_{0.0, 1.0};
};

/// Fisher-Yates shuffle driven by its own seeded engine. Uses the Boost
/// distribution so the permutation is the same on every standard library.
template <typename T>
void seeded_shuffle(std::vector<T> &v, std::uint64_t seed) {
    Engine engine(seed);
    for (std::size_t i = v.size(); i > 1; --i) {
        boost::random::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(v[i - 1], v[pick(engine)]);
    }
}

}  // namespace fflow

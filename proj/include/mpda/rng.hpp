#pragma once

#include <cstdint>
#include <random>

#include "mpda/tensor.hpp"

namespace mpda {

// splitmix64 step; used to derive independent seeds from a base seed
// plus salts (step index, agent index, ...) without stream correlation.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t base, uint64_t salt) {
    return splitmix64(base ^ splitmix64(salt + 0x632be59bd9b4e019ull));
}

inline uint64_t mix_seed(uint64_t base, uint64_t s1, uint64_t s2) {
    return mix_seed(mix_seed(base, s1), s2);
}

// Sampling helpers are done in double and cast, so f32 and f64 builds of the
// same seed produce the same underlying stream.
template <typename T>
void fill_normal(Tensor<T>& t, uint64_t seed, double stddev, double mean = 0.0) {
    std::mt19937_64 eng(seed);
    std::normal_distribution<double> dist(mean, stddev);
    for (auto& v : t.data) v = static_cast<T>(dist(eng));
}

template <typename T>
void fill_uniform(Tensor<T>& t, uint64_t seed, double lo, double hi) {
    std::mt19937_64 eng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data) v = static_cast<T>(dist(eng));
}

}  // namespace mpda

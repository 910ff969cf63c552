#pragma once

#include <cstdint>
#include <random>

#include "ctxsr/tensor.hpp"

namespace ctxsr {

// splitmix64 finalizer; derives independent stream seeds from (seed, key).
constexpr uint64_t mix_seed(uint64_t seed, uint64_t key) {
    uint64_t z = seed + 0x9E3779B97F4A7C15ull * (key + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

inline Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0) {
    Tensor t(shape);
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

inline Tensor rand_uniform(const Shape& shape, Rng& rng, double lo, double hi) {
    Tensor t(shape);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

}  // namespace ctxsr

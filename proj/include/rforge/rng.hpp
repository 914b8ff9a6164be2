#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>

namespace rforge {

/// Every stochastic component draws from this engine so a single seed pins a run.
using Rng = std::mt19937_64;

/// Uniform draw on the open interval (0, 1).
inline double uniform_open(Rng& rng) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    double u = dist(rng);
    while (u <= 0.0) {
        u = dist(rng);
    }
    return u;
}

/// Standard Gumbel(0, 1) sample via -log(-log(u)).
inline double gumbel(Rng& rng) {
    return -std::log(-std::log(uniform_open(rng)));
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(rng);
}

inline bool bernoulli(Rng& rng, double p) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    return dist(rng) < p;
}

} // namespace rforge

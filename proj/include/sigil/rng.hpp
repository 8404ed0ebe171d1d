#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

#include "sigil/array.hpp"

namespace sigil {

inline uint64_t mix64(uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Stable stream splitting: the same (base, tags) always names the same stream,
// independent of how many draws other streams consumed.
inline uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> tags) {
    uint64_t s = mix64(base);
    for (uint64_t t : tags) {
        s = mix64(s ^ mix64(t));
    }
    return s;
}

// mt19937_64 with hand-rolled transforms so draws are fully specified by this
// file, not by the standard library's distribution implementations.
struct Rng {
    std::mt19937_64 gen;
    double spare      = 0;
    bool has_spare    = false;

    explicit Rng(uint64_t seed) : gen(seed) {}

    uint64_t next_u64() { return gen(); }

    // [0, 1)
    double uniform() { return (double)(next_u64() >> 11) * 0x1.0p-53; }

    // (0, 1): never returns the endpoints, so `k <= lambda` is exact at
    // lambda in {0, 1}.
    double uniform_open() { return ((double)(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller with cached spare.
    double normal() {
        if (has_spare) {
            has_spare = false;
            return spare;
        }
        double u1 = uniform_open();
        double u2 = uniform();
        double r  = std::sqrt(-2.0 * std::log(u1));
        double a  = 2.0 * M_PI * u2;
        spare     = r * std::sin(a);
        has_spare = true;
        return r * std::cos(a);
    }

    // uniform integer in [0, n) via rejection
    int64_t below(int64_t n) {
        uint64_t un    = (uint64_t)n;
        uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return (int64_t)(x % un);
    }

    bool bernoulli(double p) { return uniform() < p; }
};

template <class T>
void fill_normal(ArrayND<T>& a, Rng& rng) {
    for (int64_t i = 0; i < a.numel(); i++) {
        a[i] = (T)rng.normal();
    }
}

template <class T>
void fill_normal(ArrayND<T>& a, Rng& rng, double stddev) {
    for (int64_t i = 0; i < a.numel(); i++) {
        a[i] = (T)(rng.normal() * stddev);
    }
}

template <class T>
ArrayND<T> randn(std::vector<int64_t> shape, uint64_t seed) {
    ArrayND<T> a(std::move(shape));
    Rng rng(seed);
    fill_normal(a, rng);
    return a;
}

}  // namespace sigil

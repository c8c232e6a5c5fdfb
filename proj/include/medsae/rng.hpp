#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <string_view>
#include <vector>

namespace medsae {

// 64-bit FNV-1a. Used for label-derived seeds and request digests.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s) {
    return fnv1a64(s.data(), s.size());
}

// Derives a stage seed from a root seed, a label, and an optional counter
// (epoch number, neuron id, ...). One root seed fans out to every stage.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label,
                                 std::uint64_t counter = 0) {
    std::uint64_t h = fnv1a64(label);
    h = fnv1a64(&root, sizeof(root), h);
    h = fnv1a64(&counter, sizeof(counter), h);
    return h;
}

// Counter-style splittable PRNG (SplitMix64). Deterministic across platforms;
// every stream is fully determined by its 64-bit seed.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1).
    double next_double() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    // Uniform double in (0, 1]; safe as a log() argument.
    double next_double_open() {
        return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
    }

    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // Unbiased integer in [0, n). Lemire's multiply-reject method.
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0) return 0;
        while (true) {
            std::uint64_t x = next();
            __uint128_t m = static_cast<__uint128_t>(x) * n;
            auto lo = static_cast<std::uint64_t>(m);
            if (lo >= n || lo >= (0 - n) % n) {
                return static_cast<std::uint64_t>(m >> 64);
            }
        }
    }

    // Standard normal samples via Box-Muller. Always draws uniforms in pairs
    // so the stream position depends only on ceil(n/2).
    void fill_gaussian(double* out, std::size_t n) {
        for (std::size_t i = 0; i < n; i += 2) {
            double u1 = next_double_open();
            double u2 = next_double();
            double r = std::sqrt(-2.0 * std::log(u1));
            double a = 2.0 * std::numbers::pi * u2;
            out[i] = r * std::cos(a);
            if (i + 1 < n) out[i + 1] = r * std::sin(a);
        }
    }

    double next_gaussian() {
        double g[2];
        fill_gaussian(g, 2);
        return g[0];
    }

private:
    std::uint64_t state_;
};

// In-place Fisher-Yates over [0, n) index vector.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    SplitMix64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.next_below(i));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

// k distinct values sampled uniformly from `pool`, order-stable per seed.
inline std::vector<std::size_t> sample_without_replacement(
        std::vector<std::size_t> pool, std::size_t k, std::uint64_t seed) {
    SplitMix64 rng(seed);
    std::size_t n = pool.size();
    if (k > n) k = n;
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.next_below(n - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

} // namespace medsae

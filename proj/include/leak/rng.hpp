#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace leak::rng {

// Stateless 64-bit mixer used to derive independent engine seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Deterministic random stream. mt19937_64 is fully specified by the standard,
// and every sampler below is hand-rolled on top of raw engine output, so a
// given (seed, stream_id) produces bit-identical draws on every platform.
// The std::*_distribution adaptors are deliberately avoided: their algorithms
// are implementation-defined and would break cross-toolchain reproducibility.
class Stream {
public:
    explicit Stream(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    // Independent substream: mixes the id into the seed before keying the engine.
    static Stream derived(std::uint64_t seed, std::uint64_t stream_id) {
        return Stream(splitmix64(seed) ^ splitmix64(stream_id * 0x9E3779B97F4A7C15ULL + 1));
    }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n) via rejection sampling.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Stream::below: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller (cosine branch only, so one call consumes
    // exactly two engine draws and the stream stays easy to reason about).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Index draw from cumulative weights (strictly increasing, last = total mass).
    std::size_t categorical(std::span<const double> cumulative) {
        if (cumulative.empty()) throw std::invalid_argument("Stream::categorical: empty weights");
        const double total = cumulative.back();
        if (!(total > 0.0)) throw std::invalid_argument("Stream::categorical: total mass must be positive");
        const double u = uniform() * total;
        std::size_t lo = 0, hi = cumulative.size() - 1;
        while (lo < hi) {
            const std::size_t mid = (lo + hi) / 2;
            if (u < cumulative[mid]) hi = mid; else lo = mid + 1;
        }
        return lo;
    }

    // Fisher-Yates; spelled out instead of std::shuffle for the same
    // reproducibility reason as above.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            using std::swap;
            swap(v[i - 1], v[below(i)]);
        }
    }

    // First k entries of a random permutation of [0, n), returned sorted so
    // that downstream gathers preserve the original element order.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

private:
    std::mt19937_64 engine_;
};

inline std::vector<std::size_t> Stream::sample_indices(std::size_t n, std::size_t k) {
    if (k > n) throw std::invalid_argument("Stream::sample_indices: k exceeds n");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

// Cumulative sums for categorical sampling; rejects negative weights.
inline std::vector<double> cumulative_weights(std::span<const double> weights) {
    std::vector<double> cum(weights.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] < 0.0) throw std::invalid_argument("cumulative_weights: negative weight");
        acc += weights[i];
        cum[i] = acc;
    }
    return cum;
}

} // namespace leak::rng

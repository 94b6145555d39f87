#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace bracketlearn {

/// Counter-based deterministic generator (splitmix64 core).
///
/// Stream state is derived purely from (seed, counters), so independent jobs
/// never share generator state and every draw sequence is reproducible
/// bit-for-bit across platforms. std:: distributions are avoided on purpose:
/// their output is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    /// Derive an independent stream from a seed and one or more counters
    /// (e.g. epoch number, job index).
    static Rng derived(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
        Rng r(mix_seed(seed, a, b));
        r.next();
        return r;
    }

    /// Deterministic child seed for a (seed, counter) pair; feeds nested
    /// training runs so sibling jobs never share a stream.
    static std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
        return mix(mix(seed ^ 0x9e3779b97f4a7c15ULL, a), b);
    }

    std::uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Lemire-style rejection, exactly unbiased.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            std::uint64_t r = next();
            unsigned __int128 m = static_cast<unsigned __int128>(r) * n;
            if (static_cast<std::uint64_t>(m) >= threshold)
                return static_cast<std::uint64_t>(m >> 64);
        }
    }

    /// Standard normal via Box-Muller (pairs discarded; fine for init use).
    double normal();

private:
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

inline double Rng::normal() {
    // Marsaglia polar method, deterministic given the stream.
    for (;;) {
        double u = 2.0 * uniform() - 1.0;
        double v = 2.0 * uniform() - 1.0;
        double s = u * u + v * v;
        if (s > 0.0 && s < 1.0) {
            double f = std::sqrt(-2.0 * std::log(s) / s);
            return u * f;
        }
    }
}

/// Identity permutation of length n shuffled by Fisher-Yates under `rng`.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

} // namespace bracketlearn

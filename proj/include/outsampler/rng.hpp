#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace outsampler {

namespace detail {

// SplitMix64 finalizer; full-period mixing of a 64-bit key.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

/// Counter-based random stream. Draws are a pure function of
/// (seed, stream, counter), so sequences are reproducible across runs,
/// hosts, and any partitioning of work into threads.
struct RngStream {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    std::uint64_t counter = 0;

    RngStream() = default;
    RngStream(std::uint64_t seed_, std::uint64_t stream_, std::uint64_t counter_ = 0)
        : seed(seed_), stream(stream_), counter(counter_) {}

    std::uint64_t next_bits() {
        std::uint64_t h = detail::splitmix64(seed);
        h = detail::splitmix64(h ^ stream);
        h = detail::splitmix64(h ^ counter);
        ++counter;
        return h;
    }

    /// Uniform draw in (0, 1), never exactly 0 or 1.
    double uniform() {
        const double u = static_cast<double>(next_bits() >> 11) * 0x1.0p-53;
        return u == 0.0 ? 0x1.0p-53 : u;
    }

    /// Standard normal draw (Box-Muller, cosine branch).
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    std::vector<double> normal_vec(int d) {
        std::vector<double> v(static_cast<std::size_t>(d));
        for (auto& x : v) x = normal();
        return v;
    }
};

}  // namespace outsampler

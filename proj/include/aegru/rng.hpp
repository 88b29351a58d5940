#pragma once

#include <cmath>
#include <cstdint>

#include "aegru/errors.hpp"

// Deterministic random number generation with splittable streams.
//
// Every stochastic component of the toolkit draws from an RngStream, a
// xoshiro256++ generator whose state is derived from (seed, stream id) via
// splitmix64. Streams with distinct ids are statistically independent, so
// e.g. each synthetic channel owns its own stream and adding channels does
// not perturb the ones already generated. All sampling algorithms are fixed
// here rather than delegated to <random>, whose distributions are
// implementation-defined; results are reproducible across platforms.

namespace aegru {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stateless mix of a base seed and a stream/cell index into a fresh seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = seed ^ (0x6a09e667f3bcc909ULL + stream * 0x9e3779b97f4a7c15ULL);
    splitmix64(s);
    return splitmix64(s);
}

class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0) {
        std::uint64_t s = derive_seed(seed, stream);
        for (auto& word : state_) word = splitmix64(s);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on (0, 1]; safe as a log() argument.
    double uniform_pos() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n) (Lemire's multiply-shift with rejection).
    std::uint64_t uniform_below(std::uint64_t n) {
        if (n == 0) throw ContractError("uniform_below: n must be positive");
        while (true) {
            std::uint64_t x = next_u64();
            unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
            std::uint64_t lo = static_cast<std::uint64_t>(m);
            if (lo >= n || lo >= static_cast<std::uint64_t>(-n) % n)
                return static_cast<std::uint64_t>(m >> 64);
        }
    }

    // Standard normal via Box-Muller; the paired value is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_pos();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 6.283185307179586476925286766559 * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    // Poisson sample: sequential inversion below mean 10, rounded normal
    // approximation above. Deterministic in the stream state.
    std::uint64_t poisson(double mean) {
        if (!(mean >= 0.0)) throw ContractError("poisson: mean must be non-negative");
        if (mean == 0.0) return 0;
        if (mean < 10.0) {
            double p = std::exp(-mean);
            double cum = p;
            const double u = uniform();
            std::uint64_t k = 0;
            while (u > cum) {
                ++k;
                p *= mean / static_cast<double>(k);
                cum += p;
                if (k > 200) break;  // cumulative has saturated numerically
            }
            return k;
        }
        const double x = mean + std::sqrt(mean) * normal();
        return x <= 0.0 ? 0 : static_cast<std::uint64_t>(std::llround(x));
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4] = {};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace aegru

#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace fia {

// Deterministic, platform-independent RNG (splitmix64 core). We do not use
// <random> distributions because their sequences are implementation-defined
// and the artifact promises bitwise-reproducible runs.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed + 0x9E3779B97F4A7C15ULL) {}

    // Derive an independent stream, e.g. rng.fork("stage1.init").
    Rng fork(const std::string& tag) const {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : tag) h = (h ^ c) * 0x100000001b3ULL;
        Rng r;
        r.state_ = mix(state_ ^ h);
        return r;
    }

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    uint32_t next_u32() { return static_cast<uint32_t>(next_u64() >> 32); }

    // Uniform in [0,1) with 53 bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

    // Standard normal via Box-Muller (cached spare kept for determinism).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Laplace(0, b) by inverse CDF.
    double laplace(double b) {
        double u = uniform() - 0.5;
        double s = u < 0 ? -1.0 : 1.0;
        double a = u < 0 ? -u : u;
        return -b * s * std::log1p(-2.0 * a);
    }

private:
    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace fia

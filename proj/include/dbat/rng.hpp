#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "dbat/common.hpp"

namespace dbat {

// Deterministic RNG. mt19937_64 output is fixed by the standard and the
// derived draws below avoid std::*_distribution, whose streams differ
// between library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [lo, hi] inclusive
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(gen_() % span);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // normal(0, std) resampled into [-2std, 2std], the usual init for
    // transformer weights
    double trunc_normal(double std_dev) {
        for (int i = 0; i < 64; ++i) {
            double v = normal() * std_dev;
            if (std::fabs(v) <= 2.0 * std_dev) return v;
        }
        return 0.0;
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace dbat

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace nichemap {

// Seeded Box-Muller stream, identical across platforms.
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed) : eng_(seed) {}

    // 53-bit mantissa, shifted into (0, 1) so log stays finite.
    double uniform() {
        return (static_cast<double>(eng_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

    double next() {
        constexpr double two_pi = 6.283185307179586476925286766559;
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace nichemap

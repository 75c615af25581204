#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace dualvit {

// Deterministic source for parameter initialization and data synthesis.
// Draws are made in double and narrowed by the caller, so a float and a
// double model built from one seed hold the same values up to rounding.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    std::uint64_t next() { return engine_(); }

    // N(0, std^2) resampled until |x| <= 2 std.
    double truncated_normal(double std) {
        for (;;) {
            const double x = normal();
            if (x >= -2.0 && x <= 2.0) return x * std;
        }
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace dualvit

#pragma once

// Scalar normal-distribution helpers and the seeded RNG used across the
// library. All randomness flows through Rng so that every operation is
// reproducible from an explicit seed; nothing uses global random state.

#include <cstdint>
#include <random>
#include <stdexcept>

namespace dcsgd {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

// Standard normal CDF via erfc; accurate into the far tails.
double normal_cdf(double x);

// Complementary CDF, 1 - Phi(x), without cancellation for large x.
double normal_cdf_complement(double x);

// Inverse standard normal CDF (Wichura's AS 241, double precision).
// Throws std::domain_error for p outside (0, 1).
double normal_quantile(double p);

double normal_log_pdf(double x, double mean, double std);

// Mean of N(mean, std^2) truncated to (lower, +inf).
double truncated_normal_mean(double mean, double std, double lower);

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform on the open interval (0, 1).
    double uniform01() {
        const std::uint64_t bits = engine_() >> 11;
        return (static_cast<double>(bits) + 0.5) * 0x1p-53;
    }

    double standard_normal() { return normal_quantile(uniform01()); }

    double normal(double mean, double std) {
        return mean + std * standard_normal();
    }

    // Inverse-CDF draw from N(mean, std^2) restricted to (lower, +inf).
    // Caller is responsible for checking that the truncation mass is sane.
    double truncated_normal(double mean, double std, double lower);

    std::uint64_t next_u64() { return engine_(); }

    // Derive an independent stream; mixes the key so nearby keys decorrelate.
    Rng fork(std::uint64_t key) const;

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

// SplitMix64 finalizer; used for deriving per-stream seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace dcsgd

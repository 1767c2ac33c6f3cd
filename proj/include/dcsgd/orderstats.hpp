#pragma once

// Order statistics of worker runtimes: the throughput objective and its
// argmax, closed-form Gaussian order-statistic expectations (adaptive
// quadrature), the Elfving approximation, idle-time accounting, and Monte
// Carlo order statistics for arbitrary joint samplers.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "dcsgd/mathutil.hpp"

namespace dcsgd {

struct SortedRuntimes {
    std::vector<double> values;  // ascending, all > 0
};

// Validates positivity and ordering; throws std::invalid_argument.
SortedRuntimes make_sorted_runtimes(std::vector<double> values);

// Sorts a joint runtime vector into a SortedRuntimes.
SortedRuntimes sort_runtimes(std::vector<double> values);

struct CutoffDecision {
    std::size_t c = 0;         // number of fastest workers waited on, in [1, n]
    double throughput = 0.0;   // c / predicted_sorted.values[c-1]
    SortedRuntimes predicted_sorted;
};

// Omega(c) = c / x_(c), workers finished per second when waiting on the c
// fastest. c is 1-indexed.
double throughput(const SortedRuntimes& sorted, std::size_t c);

// argmax over c in [c_min, n] of Omega(c); ties broken toward the largest c.
CutoffDecision optimal_cutoff(const SortedRuntimes& sorted, std::size_t c_min = 1);

// E[x_(j)] of n iid N(mu, sigma^2) draws by adaptive quadrature of
//   Z(n,j) * integral of x * Phi(x)^(j-1) * (1-Phi(x))^(n-j) * p(x) dx
// with Z(n,j) = n! / ((j-1)! (n-j)!) evaluated in log space.
// Absolute error <= 1e-6 for n <= 500.
double gaussian_order_stat_expectation(std::size_t n, std::size_t j, double mu,
                                       double sigma);

// Elfving approximation: mu + Phi^-1((j - pi/8) / (n - pi/4 + 1)) * sigma.
double elfving_expectation(std::size_t n, std::size_t j, double mu, double sigma);

// Expected per-worker idle time under full synchronization:
// E[x_(n)] - E[x_(floor(n/2))], both via the Elfving approximation.
double expected_idle_time(std::size_t n, double mu, double sigma);

struct OrderStatSummary {
    std::vector<double> mean;  // per rank, ascending rank order
    std::vector<double> std;   // Bessel-corrected
};

// Sample-sort-record estimate of per-rank order-statistic moments.
// The sampler draws one joint runtime vector per call; deterministic given
// the seed. Throws std::runtime_error naming the sample index if the sampler
// produces a non-finite value.
OrderStatSummary monte_carlo_order_stats(
    const std::function<std::vector<double>(Rng&)>& sampler, std::size_t n_samples,
    std::uint64_t seed);

}  // namespace dcsgd

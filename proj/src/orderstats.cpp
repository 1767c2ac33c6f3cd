#include "dcsgd/orderstats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dcsgd {

namespace {

// log density of the j-th order statistic of n standard normals.
struct OrderStatDensity {
    double log_z;  // log n! - log (j-1)! - log (n-j)!
    double j_minus_1;
    double n_minus_j;

    OrderStatDensity(std::size_t n, std::size_t j)
        : log_z(std::lgamma(static_cast<double>(n) + 1.0) -
                std::lgamma(static_cast<double>(j)) -
                std::lgamma(static_cast<double>(n - j) + 1.0)),
          j_minus_1(static_cast<double>(j - 1)),
          n_minus_j(static_cast<double>(n - j)) {}

    double operator()(double t) const {
        const double cdf = normal_cdf(t);
        const double ccdf = normal_cdf_complement(t);
        if (cdf <= 0.0 || ccdf <= 0.0) return 0.0;
        const double log_pdf = -0.5 * t * t - 0.5 * std::log(2.0 * kPi);
        const double log_density = log_z + j_minus_1 * std::log(cdf) +
                                   n_minus_j * std::log(ccdf) + log_pdf;
        return std::exp(log_density);
    }
};

double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                        double fa, double fm, double fb, double whole, double tol,
                        int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = f(lm);
    const double frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::fabs(delta) <= 15.0 * tol) {
        return left + right + delta / 15.0;
    }
    return adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b,
                 double tol) {
    // Seed the adaptive scheme with a coarse partition so narrow peaks
    // (large n order statistics) are not missed by the first parabola.
    const int segments = 32;
    double total = 0.0;
    double x0 = a;
    double f0 = f(x0);
    for (int s = 1; s <= segments; ++s) {
        const double x1 = a + (b - a) * s / segments;
        const double f1 = f(x1);
        const double mid = 0.5 * (x0 + x1);
        const double fm = f(mid);
        const double whole = (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1);
        total += adaptive_simpson(f, x0, x1, f0, fm, f1, whole, tol / segments, 40);
        x0 = x1;
        f0 = f1;
    }
    return total;
}

}  // namespace

SortedRuntimes make_sorted_runtimes(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("sorted runtimes: empty input");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!(values[i] > 0.0) || !std::isfinite(values[i])) {
            throw std::invalid_argument("sorted runtimes: non-positive entry at rank " +
                                        std::to_string(i + 1));
        }
        if (i > 0 && values[i] < values[i - 1]) {
            throw std::invalid_argument("sorted runtimes: not ascending at rank " +
                                        std::to_string(i + 1));
        }
    }
    return SortedRuntimes{std::move(values)};
}

SortedRuntimes sort_runtimes(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    return make_sorted_runtimes(std::move(values));
}

double throughput(const SortedRuntimes& sorted, std::size_t c) {
    if (c < 1 || c > sorted.values.size()) {
        throw std::invalid_argument("throughput: cutoff " + std::to_string(c) +
                                    " outside [1, " +
                                    std::to_string(sorted.values.size()) + "]");
    }
    return static_cast<double>(c) / sorted.values[c - 1];
}

CutoffDecision optimal_cutoff(const SortedRuntimes& sorted, std::size_t c_min) {
    const std::size_t n = sorted.values.size();
    if (n == 0) throw std::invalid_argument("optimal_cutoff: empty input");
    if (c_min < 1 || c_min > n) {
        throw std::invalid_argument("optimal_cutoff: c_min " + std::to_string(c_min) +
                                    " outside [1, " + std::to_string(n) + "]");
    }
    std::size_t best_c = c_min;
    double best_omega = throughput(sorted, c_min);
    for (std::size_t c = c_min + 1; c <= n; ++c) {
        const double omega = throughput(sorted, c);
        if (omega >= best_omega) {  // ties go to the larger c
            best_omega = omega;
            best_c = c;
        }
    }
    return CutoffDecision{best_c, best_omega, sorted};
}

double gaussian_order_stat_expectation(std::size_t n, std::size_t j, double mu,
                                       double sigma) {
    if (n == 0 || j < 1 || j > n) {
        throw std::invalid_argument("order statistic index " + std::to_string(j) +
                                    " outside [1, " + std::to_string(n) + "]");
    }
    if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be non-negative");
    if (sigma == 0.0 || n == 1) return mu;

    const OrderStatDensity density(n, j);
    const auto integrand = [&density](double t) { return t * density(t); };
    // Standardized variable: integrate over [-10, 10] and rescale.
    const double std_expectation = integrate(integrand, -10.0, 10.0, 1e-10);
    return mu + sigma * std_expectation;
}

double elfving_expectation(std::size_t n, std::size_t j, double mu, double sigma) {
    if (n < 2 || j < 1 || j > n) {
        throw std::invalid_argument("elfving_expectation: j " + std::to_string(j) +
                                    " outside [1, " + std::to_string(n) +
                                    "] or n < 2");
    }
    if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be non-negative");
    if (sigma == 0.0) return mu;
    const double p = (static_cast<double>(j) - kPi / 8.0) /
                     (static_cast<double>(n) - kPi / 4.0 + 1.0);
    if (!(p > 0.0 && p < 1.0)) {
        throw std::domain_error("elfving_expectation: quantile argument outside (0,1)");
    }
    return mu + normal_quantile(p) * sigma;
}

double expected_idle_time(std::size_t n, double mu, double sigma) {
    if (n < 2) throw std::invalid_argument("expected_idle_time: n must be >= 2");
    const double top = elfving_expectation(n, n, mu, sigma);
    const double mid = elfving_expectation(n, n / 2, mu, sigma);
    return top - mid;
}

OrderStatSummary monte_carlo_order_stats(
    const std::function<std::vector<double>(Rng&)>& sampler, std::size_t n_samples,
    std::uint64_t seed) {
    if (n_samples < 2) {
        throw std::invalid_argument("monte_carlo_order_stats: need >= 2 samples");
    }
    Rng rng(seed);
    std::vector<double> sum;
    std::vector<double> sum_sq;
    std::size_t n = 0;
    std::vector<double> draw;
    for (std::size_t s = 0; s < n_samples; ++s) {
        draw = sampler(rng);
        if (s == 0) {
            n = draw.size();
            sum.assign(n, 0.0);
            sum_sq.assign(n, 0.0);
        } else if (draw.size() != n) {
            throw std::runtime_error("sampler changed dimension at sample " +
                                     std::to_string(s));
        }
        for (double v : draw) {
            if (!std::isfinite(v)) {
                throw std::runtime_error("sampler produced non-finite value at sample " +
                                         std::to_string(s));
            }
        }
        std::sort(draw.begin(), draw.end());
        for (std::size_t r = 0; r < n; ++r) {
            sum[r] += draw[r];
            sum_sq[r] += draw[r] * draw[r];
        }
    }
    OrderStatSummary summary;
    summary.mean.resize(n);
    summary.std.resize(n);
    const double count = static_cast<double>(n_samples);
    for (std::size_t r = 0; r < n; ++r) {
        const double mean = sum[r] / count;
        const double var =
            std::max(0.0, (sum_sq[r] - count * mean * mean) / (count - 1.0));
        summary.mean[r] = mean;
        summary.std[r] = std::sqrt(var);
    }
    return summary;
}

}  // namespace dcsgd

#pragma once

// Deterministic generator of synthetic correlated, regime-switching worker
// runtime traces, plus replay of recorded traces. Stands in for
// instrumenting a real cluster.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcsgd/mathutil.hpp"
#include "dcsgd/trace.hpp"

namespace dcsgd {

struct SimError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RegimeSpec {
    std::size_t start_iteration = 0;
    std::vector<double> base_mean;   // per worker, seconds
    std::vector<double> base_std;    // per worker, independent noise std
    std::vector<std::size_t> group;  // worker -> group id
    double group_noise_std = 0.0;    // AR(1) innovation std, shared within group
    std::optional<std::size_t> slow_group;
    double slow_multiplier = 1.0;    // applied to base means of the slow group
};

struct SimSpec {
    std::size_t n_workers = 0;
    std::size_t iterations = 0;
    std::vector<RegimeSpec> regimes;  // ordered by start_iteration, first at 0
    std::uint64_t seed = 0;
    double ar_coeff = 0.9;
};

// Per iteration: runtime_j = base_mean_j * multiplier + group AR(1) noise
// + independent noise, clamped to >= 1e-3 s and quantized to 9 fractional
// digits. Group noise states start at their stationary distribution and
// persist across regime switches. Deterministic given spec.seed.
RuntimeTrace simulate_trace(const SimSpec& spec);

// Sequential row source over a recorded trace; exhaustion is signaled by an
// empty optional, and reset() restarts the identical sequence.
class TraceReplay {
  public:
    explicit TraceReplay(RuntimeTrace trace);

    std::optional<std::vector<double>> next();
    void reset() { position_ = 0; }
    std::size_t position() const { return position_; }
    const RuntimeTrace& trace() const { return trace_; }

  private:
    RuntimeTrace trace_;
    std::size_t position_ = 0;
};

// Key-value spec files:
//   n_workers/iterations/seed/ar_coeff at the top, then one [regime] section
//   per regime with start, base_mean, base_std (scalar broadcast or comma
//   list), groups (comma list of ids or "blocks:n1,n2,..."), group_noise_std
//   and optional slow_group/slow_multiplier.
SimSpec parse_sim_spec_text(const std::string& text);
SimSpec load_sim_spec(const std::string& path);

// Named scenario presets addressable from the CLI.
std::vector<std::string> preset_names();
SimSpec preset_sim_spec(const std::string& name);

}  // namespace dcsgd

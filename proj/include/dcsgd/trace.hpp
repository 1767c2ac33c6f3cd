#pragma once

// Per-worker runtime traces: the canonical data model, the line-oriented
// file format, and the global normalization rule applied before model
// training and inference.
//
// File format, one row per line:
//   #workers=<n>
//   iteration<TAB>r_1<TAB>...<TAB>r_n
// Runtimes are decimal literals; writers render shortest-round-trip decimals
// so that save followed by load reproduces the trace bit-exactly.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcsgd {

struct TraceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class RuntimeTrace {
public:
    RuntimeTrace(std::size_t n_workers, std::vector<std::vector<double>> rows);

    std::size_t n_workers() const { return n_workers_; }
    std::size_t n_rows() const { return rows_.size(); }
    // Row index doubles as the iteration number: iterations are contiguous
    // from 0 by invariant.
    const std::vector<double>& row(std::size_t i) const { return rows_.at(i); }
    const std::vector<std::vector<double>>& rows() const { return rows_; }

    bool operator==(const RuntimeTrace& other) const = default;

private:
    std::size_t n_workers_;
    std::vector<std::vector<double>> rows_;
};

struct NormalizationSpec {
    double scale = 1.0;  // 2 x mean of the first lag window it was fitted on
};

struct LagWindow {
    // lag() rows of n_workers() normalized runtimes each.
    std::vector<std::vector<double>> observations;

    std::size_t lag() const { return observations.size(); }
    std::size_t n_workers() const {
        return observations.empty() ? 0 : observations.front().size();
    }
};

RuntimeTrace load_trace(const std::string& path);
void save_trace(const RuntimeTrace& trace, const std::string& path);

// Shortest decimal rendering that parses back to the same double.
std::string render_runtime(double value);

// scale = 2 x arithmetic mean of the first lag rows.
NormalizationSpec fit_normalization(const RuntimeTrace& trace, std::size_t lag);

RuntimeTrace normalize(const RuntimeTrace& trace, const NormalizationSpec& spec);
RuntimeTrace denormalize(const RuntimeTrace& trace, const NormalizationSpec& spec);

// Rows [start, start+lag) of an (already normalized) trace.
LagWindow window_at(const RuntimeTrace& trace, std::size_t start, std::size_t lag);

}  // namespace dcsgd

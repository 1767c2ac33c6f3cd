#include "dcsgd/trace.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace dcsgd {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

[[noreturn]] void fail_line(const std::string& path, std::size_t line_no,
                            const std::string& what) {
    throw TraceError(path + ":" + std::to_string(line_no) + ": " + what);
}

}  // namespace

RuntimeTrace::RuntimeTrace(std::size_t n_workers,
                           std::vector<std::vector<double>> rows)
    : n_workers_(n_workers), rows_(std::move(rows)) {
    if (n_workers_ == 0) throw TraceError("trace needs at least one worker");
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        if (rows_[i].size() != n_workers_) {
            throw TraceError("row " + std::to_string(i) + " has " +
                             std::to_string(rows_[i].size()) + " entries, expected " +
                             std::to_string(n_workers_));
        }
        for (double v : rows_[i]) {
            if (!(v > 0.0) || !std::isfinite(v)) {
                throw TraceError("non-positive runtime in row " + std::to_string(i));
            }
        }
    }
}

RuntimeTrace load_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TraceError("cannot open trace file: " + path);

    std::string line;
    std::size_t line_no = 0;

    if (!std::getline(in, line)) throw TraceError(path + ": empty file");
    ++line_no;
    const std::string header_prefix = "#workers=";
    if (line.rfind(header_prefix, 0) != 0) {
        fail_line(path, line_no, "missing '#workers=<n>' header");
    }
    std::size_t n_workers = 0;
    {
        const std::string num = line.substr(header_prefix.size());
        const auto [ptr, ec] =
            std::from_chars(num.data(), num.data() + num.size(), n_workers);
        if (ec != std::errc() || ptr != num.data() + num.size() || n_workers == 0) {
            fail_line(path, line_no, "bad worker count '" + num + "'");
        }
    }

    std::vector<std::vector<double>> rows;
    std::size_t expected_iteration = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_tabs(line);
        if (fields.size() != n_workers + 1) {
            fail_line(path, line_no,
                      "expected " + std::to_string(n_workers + 1) + " fields, got " +
                          std::to_string(fields.size()));
        }
        std::size_t iteration = 0;
        {
            const auto& f = fields[0];
            const auto [ptr, ec] =
                std::from_chars(f.data(), f.data() + f.size(), iteration);
            if (ec != std::errc() || ptr != f.data() + f.size()) {
                fail_line(path, line_no, "bad iteration index '" + f + "'");
            }
        }
        if (iteration != expected_iteration) {
            fail_line(path, line_no,
                      "iteration gap: expected " + std::to_string(expected_iteration) +
                          ", got " + std::to_string(iteration));
        }
        ++expected_iteration;

        std::vector<double> runtimes;
        runtimes.reserve(n_workers);
        for (std::size_t j = 1; j < fields.size(); ++j) {
            const auto& f = fields[j];
            char* end = nullptr;
            const double v = std::strtod(f.c_str(), &end);
            if (f.empty() || end != f.c_str() + f.size() || !std::isfinite(v)) {
                fail_line(path, line_no, "bad runtime literal '" + f + "'");
            }
            if (!(v > 0.0)) {
                fail_line(path, line_no, "non-positive runtime " + f);
            }
            runtimes.push_back(v);
        }
        rows.push_back(std::move(runtimes));
    }
    return RuntimeTrace(n_workers, std::move(rows));
}

std::string render_runtime(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

void save_trace(const RuntimeTrace& trace, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw TraceError("cannot open trace file for writing: " + path);
    out << "#workers=" << trace.n_workers() << "\n";
    for (std::size_t i = 0; i < trace.n_rows(); ++i) {
        out << i;
        for (double v : trace.row(i)) out << '\t' << render_runtime(v);
        out << '\n';
    }
    if (!out) throw TraceError("write failed: " + path);
}

NormalizationSpec fit_normalization(const RuntimeTrace& trace, std::size_t lag) {
    if (lag == 0) throw TraceError("lag must be positive");
    if (trace.n_rows() < lag) {
        throw TraceError("insufficient data: trace has " +
                         std::to_string(trace.n_rows()) + " rows, lag window needs " +
                         std::to_string(lag));
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < lag; ++i) {
        for (double v : trace.row(i)) sum += v;
    }
    const double mean = sum / (static_cast<double>(lag) * trace.n_workers());
    return NormalizationSpec{2.0 * mean};
}

RuntimeTrace normalize(const RuntimeTrace& trace, const NormalizationSpec& spec) {
    if (!(spec.scale > 0.0)) throw TraceError("normalization scale must be positive");
    std::vector<std::vector<double>> rows = trace.rows();
    for (auto& row : rows) {
        for (double& v : row) v /= spec.scale;
    }
    return RuntimeTrace(trace.n_workers(), std::move(rows));
}

RuntimeTrace denormalize(const RuntimeTrace& trace, const NormalizationSpec& spec) {
    if (!(spec.scale > 0.0)) throw TraceError("normalization scale must be positive");
    std::vector<std::vector<double>> rows = trace.rows();
    for (auto& row : rows) {
        for (double& v : row) v *= spec.scale;
    }
    return RuntimeTrace(trace.n_workers(), std::move(rows));
}

LagWindow window_at(const RuntimeTrace& trace, std::size_t start, std::size_t lag) {
    if (lag == 0) throw TraceError("lag must be positive");
    if (start + lag > trace.n_rows()) {
        throw TraceError("window [" + std::to_string(start) + ", " +
                         std::to_string(start + lag) + ") exceeds trace length " +
                         std::to_string(trace.n_rows()));
    }
    LagWindow window;
    window.observations.reserve(lag);
    for (std::size_t i = 0; i < lag; ++i) {
        window.observations.push_back(trace.row(start + i));
    }
    return window;
}

}  // namespace dcsgd

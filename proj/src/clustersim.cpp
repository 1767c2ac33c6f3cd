#include "dcsgd/clustersim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace dcsgd {

namespace {

double quantize_runtime(double v) { return std::round(v * 1e9) / 1e9; }

void validate_spec(const SimSpec& spec) {
    if (spec.n_workers == 0) throw SimError("spec needs n_workers >= 1");
    if (spec.iterations == 0) throw SimError("spec needs iterations >= 1");
    if (spec.regimes.empty()) throw SimError("spec needs at least one regime");
    if (spec.regimes.front().start_iteration != 0) {
        throw SimError("first regime must start at iteration 0");
    }
    if (!(spec.ar_coeff >= 0.0 && spec.ar_coeff < 1.0)) {
        throw SimError("ar_coeff must lie in [0, 1)");
    }
    for (std::size_t r = 0; r < spec.regimes.size(); ++r) {
        const RegimeSpec& reg = spec.regimes[r];
        if (r > 0 && reg.start_iteration <= spec.regimes[r - 1].start_iteration) {
            throw SimError("regimes must have strictly increasing start iterations");
        }
        if (reg.base_mean.size() != spec.n_workers ||
            reg.base_std.size() != spec.n_workers ||
            reg.group.size() != spec.n_workers) {
            throw SimError("regime " + std::to_string(r) +
                           ": per-worker fields must have n_workers entries");
        }
        for (double m : reg.base_mean) {
            if (!(m > 0.0)) throw SimError("base means must be positive");
        }
        for (double s : reg.base_std) {
            if (!(s >= 0.0)) throw SimError("base stds must be non-negative");
        }
        if (!(reg.group_noise_std >= 0.0)) {
            throw SimError("group noise std must be non-negative");
        }
        if (!(reg.slow_multiplier > 0.0)) {
            throw SimError("slow multiplier must be positive");
        }
    }
}

}  // namespace

RuntimeTrace simulate_trace(const SimSpec& spec) {
    validate_spec(spec);
    Rng rng(spec.seed);
    const double rho = spec.ar_coeff;
    std::map<std::size_t, double> ar_state;  // by group id, persists across regimes
    std::vector<std::vector<double>> rows;
    rows.reserve(spec.iterations);
    std::size_t regime_idx = 0;
    for (std::size_t t = 0; t < spec.iterations; ++t) {
        while (regime_idx + 1 < spec.regimes.size() &&
               spec.regimes[regime_idx + 1].start_iteration <= t) {
            ++regime_idx;
        }
        const RegimeSpec& reg = spec.regimes[regime_idx];
        std::set<std::size_t> groups(reg.group.begin(), reg.group.end());
        for (std::size_t g : groups) {
            auto it = ar_state.find(g);
            if (it == ar_state.end()) {
                const double stationary =
                    reg.group_noise_std / std::sqrt(1.0 - rho * rho);
                ar_state.emplace(g, rng.normal(0.0, stationary));
            } else {
                it->second = rho * it->second + rng.normal(0.0, reg.group_noise_std);
            }
        }
        std::vector<double> row(spec.n_workers);
        for (std::size_t j = 0; j < spec.n_workers; ++j) {
            const double mult =
                (reg.slow_group && *reg.slow_group == reg.group[j])
                    ? reg.slow_multiplier
                    : 1.0;
            const double value = reg.base_mean[j] * mult + ar_state[reg.group[j]] +
                                 rng.normal(0.0, reg.base_std[j]);
            row[j] = quantize_runtime(std::max(value, 1e-3));
        }
        rows.push_back(std::move(row));
    }
    return RuntimeTrace(spec.n_workers, std::move(rows));
}

TraceReplay::TraceReplay(RuntimeTrace trace) : trace_(std::move(trace)) {}

std::optional<std::vector<double>> TraceReplay::next() {
    if (position_ >= trace_.n_rows()) return std::nullopt;
    return trace_.row(position_++);
}

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

double parse_double(const std::string& value, const std::string& key) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw SimError("spec key " + key + ": cannot parse number '" + value + "'");
    }
}

std::uint64_t parse_uint(const std::string& value, const std::string& key) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw SimError("spec key " + key + ": cannot parse integer '" + value + "'");
    }
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) parts.push_back(trim(item));
    return parts;
}

// Scalar broadcast or a comma list of exactly n values.
std::vector<double> parse_per_worker(const std::string& value, std::size_t n,
                                     const std::string& key) {
    const std::vector<std::string> parts = split(value, ',');
    std::vector<double> out;
    out.reserve(n);
    if (parts.size() == 1) {
        out.assign(n, parse_double(parts[0], key));
    } else {
        if (parts.size() != n) {
            throw SimError("spec key " + key + ": expected 1 or " + std::to_string(n) +
                           " values, got " + std::to_string(parts.size()));
        }
        for (const auto& p : parts) out.push_back(parse_double(p, key));
    }
    return out;
}

// "blocks:n1,n2,..." assigns consecutive blocks to group ids 0,1,...;
// otherwise a comma list of n group ids.
std::vector<std::size_t> parse_groups(const std::string& value, std::size_t n) {
    std::vector<std::size_t> out;
    if (value.rfind("blocks:", 0) == 0) {
        std::size_t worker = 0;
        std::size_t gid = 0;
        for (const auto& part : split(value.substr(7), ',')) {
            const std::size_t count = parse_uint(part, "groups");
            for (std::size_t i = 0; i < count; ++i) {
                if (worker >= n) throw SimError("groups: blocks exceed n_workers");
                out.push_back(gid);
                ++worker;
            }
            ++gid;
        }
        if (worker != n) throw SimError("groups: blocks must cover all workers");
        return out;
    }
    const std::vector<std::string> parts = split(value, ',');
    if (parts.size() == 1) return std::vector<std::size_t>(n, parse_uint(parts[0], "groups"));
    if (parts.size() != n) {
        throw SimError("groups: expected " + std::to_string(n) + " ids, got " +
                       std::to_string(parts.size()));
    }
    for (const auto& p : parts) out.push_back(parse_uint(p, "groups"));
    return out;
}

}  // namespace

SimSpec parse_sim_spec_text(const std::string& text) {
    SimSpec spec;
    // First pass collects top-level keys and raw per-regime key-value maps.
    std::vector<std::map<std::string, std::string>> regimes;
    std::map<std::string, std::string>* current = nullptr;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    std::map<std::string, std::string> top;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line == "[regime]") {
            regimes.emplace_back();
            current = &regimes.back();
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw SimError("spec line " + std::to_string(line_no) +
                           ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw SimError("spec line " + std::to_string(line_no) +
                           ": empty key or value");
        }
        (current ? *current : top)[key] = value;
    }

    auto top_value = [&](const std::string& key) -> const std::string& {
        auto it = top.find(key);
        if (it == top.end()) throw SimError("spec is missing key " + key);
        return it->second;
    };
    spec.n_workers = parse_uint(top_value("n_workers"), "n_workers");
    spec.iterations = parse_uint(top_value("iterations"), "iterations");
    if (top.count("seed")) spec.seed = parse_uint(top["seed"], "seed");
    if (top.count("ar_coeff")) spec.ar_coeff = parse_double(top["ar_coeff"], "ar_coeff");

    if (regimes.empty()) throw SimError("spec needs at least one [regime] section");
    for (const auto& raw : regimes) {
        RegimeSpec reg;
        auto need = [&](const std::string& key) -> const std::string& {
            auto it = raw.find(key);
            if (it == raw.end()) throw SimError("regime is missing key " + key);
            return it->second;
        };
        reg.start_iteration = parse_uint(need("start"), "start");
        reg.base_mean = parse_per_worker(need("base_mean"), spec.n_workers, "base_mean");
        reg.base_std = parse_per_worker(need("base_std"), spec.n_workers, "base_std");
        reg.group = parse_groups(need("groups"), spec.n_workers);
        if (raw.count("group_noise_std")) {
            reg.group_noise_std =
                parse_double(raw.at("group_noise_std"), "group_noise_std");
        }
        if (raw.count("slow_group")) {
            reg.slow_group = parse_uint(raw.at("slow_group"), "slow_group");
        }
        if (raw.count("slow_multiplier")) {
            reg.slow_multiplier =
                parse_double(raw.at("slow_multiplier"), "slow_multiplier");
        }
        spec.regimes.push_back(std::move(reg));
    }
    validate_spec(spec);
    return spec;
}

SimSpec load_sim_spec(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SimError("cannot open spec file " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_sim_spec_text(buffer.str());
}

std::vector<std::string> preset_names() {
    return {"two-regime-16", "two-regime-158", "iid-158"};
}

SimSpec preset_sim_spec(const std::string& name) {
    SimSpec spec;
    if (name == "two-regime-16") {
        // 11 ordinary workers and a 5-worker group that turns 3x slow at
        // iteration 61 and stays slow.
        spec.n_workers = 16;
        spec.iterations = 2000;
        spec.seed = 7;
        RegimeSpec clean;
        clean.start_iteration = 0;
        clean.base_mean.assign(16, 1.0);
        clean.base_std.assign(16, 0.15);
        clean.group.assign(16, 0);
        std::fill(clean.group.begin() + 11, clean.group.end(), 1);
        clean.group_noise_std = 0.03;
        RegimeSpec contended = clean;
        contended.start_iteration = 61;
        contended.slow_group = 1;
        contended.slow_multiplier = 3.0;
        spec.regimes = {clean, contended};
    } else if (name == "two-regime-158") {
        // 40 of 158 workers run 3x slow through iteration 60, then recover.
        spec.n_workers = 158;
        spec.iterations = 200;
        spec.seed = 7;
        RegimeSpec contended;
        contended.start_iteration = 0;
        contended.base_mean.assign(158, 1.0);
        contended.base_std.assign(158, 0.15);
        contended.group.assign(158, 0);
        std::fill(contended.group.begin() + 118, contended.group.end(), 1);
        contended.group_noise_std = 0.03;
        contended.slow_group = 1;
        contended.slow_multiplier = 3.0;
        RegimeSpec clean = contended;
        clean.start_iteration = 61;
        clean.slow_group.reset();
        clean.slow_multiplier = 1.0;
        spec.regimes = {contended, clean};
    } else if (name == "iid-158") {
        // Independent workers matching the published cluster's pooled
        // runtime moments.
        spec.n_workers = 158;
        spec.iterations = 200;
        spec.seed = 7;
        RegimeSpec only;
        only.start_iteration = 0;
        only.base_mean.assign(158, 1.057);
        only.base_std.assign(158, 0.393);
        std::vector<std::size_t> ids(158);
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
        only.group = ids;
        only.group_noise_std = 0.0;
        spec.regimes = {only};
    } else {
        std::string known;
        for (const auto& p : preset_names()) {
            if (!known.empty()) known += ", ";
            known += p;
        }
        throw SimError("unknown preset '" + name + "'; available: " + known);
    }
    return spec;
}

}  // namespace dcsgd

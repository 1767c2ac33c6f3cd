#pragma once

// Discrete-event execution of cutoff SGD and baseline policies on a toy
// learning task over a recorded runtime trace, with simulated wall-clock
// accounting. Produces per-iteration records for convergence-vs-time and
// throughput comparisons.

#include <cstdint>
#include <deque>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcsgd/clustersim.hpp"
#include "dcsgd/predictor.hpp"
#include "dcsgd/trace.hpp"

namespace dcsgd {

struct HarnessError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class PolicyKind {
    FullSync,        // wait for every worker (c = n)
    StaticCutoff,    // wait for a fixed c
    GaussianOrder,   // running-moment Gaussian fit + Elfving argmax
    ModelCutoff,     // trained-model posterior-predictive argmax
    AsyncStaleness,  // asynchronous baseline, one update per completion
    OracleCutoff,    // argmax on the true runtimes (upper bound)
};

struct Policy {
    PolicyKind kind = PolicyKind::FullSync;
    std::size_t static_c = 0;              // StaticCutoff only
    ModelCheckpoint* ckpt = nullptr;       // ModelCutoff only
    std::size_t predictive_samples = kDefaultPredictiveSamples;
    std::size_t c_min = 1;
    // AsyncStaleness per-update learning rate; defaults to task lr / n.
    std::optional<double> async_lr;
};

std::string policy_name(const Policy& policy);

enum class TaskKind { Logistic, LinearRegression };

struct Dataset {
    std::size_t dim = 0;
    std::vector<std::vector<double>> train_x;
    std::vector<double> train_y;
    std::vector<std::vector<double>> val_x;
    std::vector<double> val_y;
};

// Parameter layout: dim weights then a bias.
struct ToyTask {
    TaskKind kind = TaskKind::Logistic;
    Dataset data;
    std::vector<double> theta;
    std::size_t minibatch = 0;  // per-iteration examples, divisible by n_workers
    double lr = 0.5;
};

// Two well-separated Gaussian classes (logistic) or a noisy linear target
// (regression); n_points split 80/20 into train/val. Deterministic given
// seed.
ToyTask make_logistic_task(std::size_t n_points, std::size_t dim,
                           std::size_t minibatch, double lr, std::uint64_t seed);
ToyTask make_linreg_task(std::size_t n_points, std::size_t dim, std::size_t minibatch,
                         double lr, std::uint64_t seed);

double dataset_loss(const ToyTask& task, const std::vector<std::vector<double>>& xs,
                    const std::vector<double>& ys);
double train_loss(const ToyTask& task);
double val_loss(const ToyTask& task);

// Mean gradient over `count` with-replacement draws from the training set.
std::vector<double> worker_gradient(const ToyTask& task, Rng& rng, std::size_t count);

struct RunRecordRow {
    std::size_t iteration = 0;
    std::size_t c = 0;
    double iter_time_s = 0.0;
    double cum_time_s = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double throughput = 0.0;  // gradients per second; see RunRecord notes
};

// For synchronous policies, throughput is the instantaneous c / iter_time.
// For async_staleness each row is one completion event: c = 1, iter_time is
// that gradient's compute duration, and throughput is cumulative updates per
// simulated second.
struct RunRecord {
    std::string policy;
    std::vector<RunRecordRow> rows;
};

// CSV with fixed column order:
// iteration,policy,c,iter_time_s,cum_time_s,train_loss,val_loss,throughput
void save_run_record_csv(const RunRecord& record, const std::string& path);
RunRecord load_run_record_csv(const std::string& path);

struct HarnessConfig {
    double overhead = 0.0;           // aggregation seconds added per iteration
    std::size_t order_window = 20;   // gaussian_order pooling window, iterations
    bool threaded = false;           // real worker threads, fixed reduction order
};

// Mutable per-run policy state (moment windows, observation buffer).
struct PolicyState {
    std::deque<std::vector<double>> observed_window;
    std::optional<ObservationBuffer> buffer;
};

// One synchronous iteration: choose c, compute per-worker gradients on
// with-replacement sub-batches (sampling independent of the cutoff), apply
// the mean gradient of the c fastest, account wall time as the c-th smallest
// runtime plus overhead, and for model_cutoff impute censored runtimes and
// advance the buffer.
RunRecordRow run_iteration(ToyTask& task, const Policy& policy,
                           const std::vector<double>& runtimes, std::size_t iteration,
                           double cum_time_before, std::uint64_t run_seed,
                           PolicyState& state, const HarnessConfig& config);

// Full run over the leading `iterations` rows of the trace (clean early
// termination if the trace is shorter). Deterministic given seed in
// single-threaded mode.
RunRecord run_experiment(const ToyTask& task, const Policy& policy,
                         const RuntimeTrace& trace, std::size_t iterations,
                         std::uint64_t seed, const HarnessConfig& config = {});

// Per-iteration argmax of c / x_(c) on the true runtimes; upper-bounds the
// realizable throughput of any cutoff policy on the same trace.
RunRecord oracle_cutoff_run(const ToyTask& task, const RuntimeTrace& trace,
                            std::size_t iterations, std::uint64_t seed,
                            const HarnessConfig& config = {});

}  // namespace dcsgd

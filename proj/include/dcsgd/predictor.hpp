#pragma once

// Real-time posterior-predictive inference of next-step worker runtimes from
// a trained checkpoint: the rolling observation buffer, Monte Carlo
// predictive mixtures, throughput-maximizing cutoff selection, censored
// runtime imputation, and one-step-ahead evaluation against a carry-forward
// baseline.

#include <cstdint>
#include <deque>
#include <optional>
#include <stdexcept>
#include <vector>

#include "dcsgd/orderstats.hpp"
#include "dcsgd/trainer.hpp"

namespace dcsgd {

struct PredictorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class RuntimeFlag { Observed, Imputed, ImputedFallback };

// Rolling window of the last `lag` runtime rows (seconds) with per-row
// provenance flags.
class ObservationBuffer {
  public:
    ObservationBuffer(std::size_t n_workers, std::size_t lag);

    std::size_t n_workers() const { return n_workers_; }
    std::size_t lag() const { return lag_; }
    std::size_t size() const { return rows_.size(); }
    bool full() const { return rows_.size() == lag_; }

    const std::vector<double>& row(std::size_t i) const { return rows_.at(i); }
    const std::vector<RuntimeFlag>& flags(std::size_t i) const { return flags_.at(i); }

    // Rows divided by spec.scale, oldest first; requires a full buffer.
    LagWindow normalized_window(const NormalizationSpec& spec) const;

  private:
    friend void advance_buffer(ObservationBuffer& buffer,
                               const std::vector<double>& values,
                               const std::vector<RuntimeFlag>& flags);

    std::size_t n_workers_;
    std::size_t lag_;
    std::deque<std::vector<double>> rows_;
    std::deque<std::vector<RuntimeFlag>> flags_;
};

// Appends a row (seconds), evicting the oldest once the buffer holds `lag`
// rows. Values must be positive and of buffer arity.
void advance_buffer(ObservationBuffer& buffer, const std::vector<double>& values,
                    const std::vector<RuntimeFlag>& flags);

struct PredictiveDistribution {
    // Per-worker marginal moments of the K-component predictive mixture, in
    // normalized units.
    GaussianVector marginal;
    // K sampled joint runtime vectors in seconds, floored at 1e-6.
    std::vector<std::vector<double>> samples;
    // Normalization scale the checkpoint applied (seconds per unit).
    double scale = 1.0;
};

// Draws K guide trajectories over the buffered window, pushes each last
// latent through a sampled transition and the emission, and summarizes the
// resulting predictive mixture. Deterministic given seed. The checkpoint is
// not modified. Requires a full buffer.
PredictiveDistribution predict_next(ModelCheckpoint& ckpt,
                                    const ObservationBuffer& buffer, std::size_t K,
                                    std::uint64_t seed);

inline constexpr std::size_t kDefaultPredictiveSamples = 50;

// Chooses the cutoff maximizing the Monte Carlo mean of Omega(c) = c/x_(c)
// across the K sampled vectors, scanning c in [c_min, n] with ties broken
// toward larger c. predicted_sorted holds the rank-wise mean of the sorted
// samples (seconds).
CutoffDecision cutoff_from_prediction(const PredictiveDistribution& pred,
                                      std::size_t c_min);

// predict_next followed by cutoff_from_prediction.
CutoffDecision predict_cutoff(ModelCheckpoint& ckpt, const ObservationBuffer& buffer,
                              std::size_t K, std::size_t c_min, std::uint64_t seed);

struct ImputedRow {
    std::vector<double> values;       // seconds, full arity
    std::vector<RuntimeFlag> flags;
};

// Fills censored entries (empty optionals) with draws from the per-worker
// predictive Gaussian truncated to (cutoff_time, inf) via the inverse CDF.
// Workers whose predictive mean sits more than 6 stds below the censor get
// the deterministic fallback cutoff_time * 1.01, flagged ImputedFallback.
// Observed entries pass through unchanged and must not exceed cutoff_time.
ImputedRow impute_censored(const PredictiveDistribution& pred,
                           const std::vector<std::optional<double>>& observed,
                           double cutoff_time, std::uint64_t seed);

struct PredictionEval {
    double model_rmse = 0.0;   // predicted sorted means vs observed sorted runtimes
    double carry_rmse = 0.0;   // previous observed row carried forward, sorted
    std::size_t steps = 0;

    struct Row {
        std::size_t iteration;
        std::vector<double> predicted_mean;  // per rank, seconds
        std::vector<double> predicted_std;   // spread of the K sorted samples
        std::vector<double> observed_sorted;
    };
    std::vector<Row> rows;
};

// One-step-ahead evaluation over trace rows [start_row, end): feeds true
// observations, predicts each next row, and scores sorted-runtime RMSE for
// the model and the carry-forward baseline.
PredictionEval evaluate_predictions(ModelCheckpoint& ckpt, const RuntimeTrace& trace,
                                    std::size_t start_row, std::size_t K,
                                    std::uint64_t seed);

}  // namespace dcsgd

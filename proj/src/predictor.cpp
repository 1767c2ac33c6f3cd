#include "dcsgd/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dcsgd {

ObservationBuffer::ObservationBuffer(std::size_t n_workers, std::size_t lag)
    : n_workers_(n_workers), lag_(lag) {
    if (n_workers_ == 0 || lag_ == 0) {
        throw PredictorError("observation buffer needs positive arity and lag");
    }
}

LagWindow ObservationBuffer::normalized_window(const NormalizationSpec& spec) const {
    if (!full()) {
        throw PredictorError("insufficient history: buffer holds " +
                             std::to_string(size()) + " of " + std::to_string(lag_) +
                             " rows");
    }
    LagWindow window;
    window.observations.reserve(lag_);
    for (const auto& row : rows_) {
        std::vector<double> normalized(row.size());
        for (std::size_t i = 0; i < row.size(); ++i) normalized[i] = row[i] / spec.scale;
        window.observations.push_back(std::move(normalized));
    }
    return window;
}

void advance_buffer(ObservationBuffer& buffer, const std::vector<double>& values,
                    const std::vector<RuntimeFlag>& flags) {
    if (values.size() != buffer.n_workers_ || flags.size() != buffer.n_workers_) {
        throw std::invalid_argument("buffer row arity mismatch: got " +
                                    std::to_string(values.size()) + " values, " +
                                    std::to_string(flags.size()) + " flags, expected " +
                                    std::to_string(buffer.n_workers_));
    }
    for (double v : values) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument("buffer rows must be positive finite runtimes");
        }
    }
    buffer.rows_.push_back(values);
    buffer.flags_.push_back(flags);
    if (buffer.rows_.size() > buffer.lag_) {
        buffer.rows_.pop_front();
        buffer.flags_.pop_front();
    }
}

PredictiveDistribution predict_next(ModelCheckpoint& ckpt,
                                    const ObservationBuffer& buffer, std::size_t K,
                                    std::uint64_t seed) {
    if (K == 0) throw PredictorError("predictive sample count must be >= 1");
    if (buffer.n_workers() != ckpt.dmm.n_workers) {
        throw PredictorError("buffer has " + std::to_string(buffer.n_workers()) +
                             " workers, checkpoint expects " +
                             std::to_string(ckpt.dmm.n_workers));
    }
    if (buffer.lag() != ckpt.guide.lag) {
        throw PredictorError("buffer lag " + std::to_string(buffer.lag()) +
                             " does not match checkpoint lag " +
                             std::to_string(ckpt.guide.lag));
    }
    const LagWindow window = buffer.normalized_window(ckpt.normalization);

    Dmm dmm(ckpt.dmm);
    Guide guide(ckpt.guide);
    const std::size_t n = ckpt.dmm.n_workers;
    const std::size_t d_z = ckpt.dmm.d_z;
    const double scale = ckpt.normalization.scale;

    Tape tape;
    std::vector<Var> rows;
    rows.reserve(window.lag());
    for (const auto& row : window.observations) rows.push_back(tape.constant(row));
    // The directional passes depend only on the window; compute once and
    // reuse across the K trajectories.
    const Guide::Passes passes = guide.run_passes(tape, ckpt.phi, rows);
    const Var z0 = tape.param(ckpt.theta, "dmm.init.mean");

    Rng rng(seed);
    PredictiveDistribution out;
    out.scale = scale;
    out.samples.reserve(K);
    std::vector<double> sum_mean(n, 0.0);
    std::vector<double> sum_moment2(n, 0.0);
    std::vector<double> noise(d_z);
    for (std::size_t k = 0; k < K; ++k) {
        PosteriorSampleVars q = guide.sample_with_passes(tape, ckpt.phi, z0, passes, rng);
        GaussianVars trans = dmm.transition(tape, ckpt.theta, q.z_seq.back());
        for (double& e : noise) e = rng.standard_normal();
        Var z_next = gaussian_reparameterized_sample(tape, trans.mean, trans.std, noise);
        GaussianVars emit = dmm.emission(tape, ckpt.theta, z_next);
        const std::vector<double>& mean = tape.value(emit.mean);
        const std::vector<double>& std = tape.value(emit.std);
        std::vector<double> sample(n);
        for (std::size_t i = 0; i < n; ++i) {
            sum_mean[i] += mean[i];
            sum_moment2[i] += std[i] * std[i] + mean[i] * mean[i];
            sample[i] = std::max(rng.normal(mean[i], std[i]) * scale, 1e-6);
        }
        out.samples.push_back(std::move(sample));
    }
    out.marginal.mean.resize(n);
    out.marginal.std.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double mu = sum_mean[i] / static_cast<double>(K);
        const double var = sum_moment2[i] / static_cast<double>(K) - mu * mu;
        out.marginal.mean[i] = mu;
        out.marginal.std[i] = std::sqrt(std::max(var, kStdFloor * kStdFloor));
    }
    return out;
}

CutoffDecision cutoff_from_prediction(const PredictiveDistribution& pred,
                                      std::size_t c_min) {
    const std::size_t n = pred.marginal.mean.size();
    if (c_min < 1 || c_min > n) {
        throw PredictorError("c_min must lie in [1, " + std::to_string(n) + "]");
    }
    if (pred.samples.empty()) {
        throw PredictorError("prediction carries no samples");
    }
    std::vector<std::vector<double>> sorted = pred.samples;
    for (auto& sample : sorted) std::sort(sample.begin(), sample.end());

    CutoffDecision best;
    for (std::size_t c = c_min; c <= n; ++c) {
        double mean_omega = 0.0;
        for (const auto& sample : sorted) {
            mean_omega += static_cast<double>(c) / sample[c - 1];
        }
        mean_omega /= static_cast<double>(sorted.size());
        if (best.c == 0 || mean_omega >= best.throughput) {
            best.c = c;
            best.throughput = mean_omega;
        }
    }
    std::vector<double> rank_mean(n, 0.0);
    for (const auto& sample : sorted) {
        for (std::size_t i = 0; i < n; ++i) rank_mean[i] += sample[i];
    }
    for (double& v : rank_mean) v /= static_cast<double>(sorted.size());
    best.predicted_sorted = make_sorted_runtimes(std::move(rank_mean));
    return best;
}

CutoffDecision predict_cutoff(ModelCheckpoint& ckpt, const ObservationBuffer& buffer,
                              std::size_t K, std::size_t c_min, std::uint64_t seed) {
    if (c_min < 1 || c_min > ckpt.dmm.n_workers) {
        throw PredictorError("c_min must lie in [1, " +
                             std::to_string(ckpt.dmm.n_workers) + "]");
    }
    return cutoff_from_prediction(predict_next(ckpt, buffer, K, seed), c_min);
}

ImputedRow impute_censored(const PredictiveDistribution& pred,
                           const std::vector<std::optional<double>>& observed,
                           double cutoff_time, std::uint64_t seed) {
    const std::size_t n = pred.marginal.mean.size();
    if (observed.size() != n) {
        throw std::invalid_argument("imputation arity mismatch: " +
                                    std::to_string(observed.size()) + " entries for " +
                                    std::to_string(n) + " workers");
    }
    if (!(cutoff_time > 0.0)) {
        throw std::invalid_argument("cutoff time must be positive");
    }
    Rng rng(seed);
    ImputedRow out;
    out.values.resize(n);
    out.flags.assign(n, RuntimeFlag::Observed);
    const double lowest_above = std::nextafter(cutoff_time, cutoff_time * 2.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (observed[i].has_value()) {
            if (*observed[i] > cutoff_time) {
                throw std::invalid_argument("observed runtime of worker " +
                                            std::to_string(i) + " exceeds the censor");
            }
            out.values[i] = *observed[i];
            continue;
        }
        const double mean = pred.marginal.mean[i] * pred.scale;
        const double std = pred.marginal.std[i] * pred.scale;
        const double alpha = (cutoff_time - mean) / std;
        if (alpha > 6.0) {
            // Inverse-CDF sampling is numerically degenerate this far into
            // the tail; the censor itself is the best available estimate.
            out.values[i] = cutoff_time * 1.01;
            out.flags[i] = RuntimeFlag::ImputedFallback;
        } else {
            out.values[i] =
                std::max(rng.truncated_normal(mean, std, cutoff_time), lowest_above);
            out.flags[i] = RuntimeFlag::Imputed;
        }
    }
    return out;
}

PredictionEval evaluate_predictions(ModelCheckpoint& ckpt, const RuntimeTrace& trace,
                                    std::size_t start_row, std::size_t K,
                                    std::uint64_t seed) {
    const std::size_t lag = ckpt.guide.lag;
    const std::size_t n = trace.n_workers();
    if (n != ckpt.dmm.n_workers) {
        throw PredictorError("trace has " + std::to_string(n) +
                             " workers, checkpoint expects " +
                             std::to_string(ckpt.dmm.n_workers));
    }
    if (start_row < lag || start_row >= trace.n_rows()) {
        throw PredictorError("evaluation must start in [lag, rows): lag " +
                             std::to_string(lag) + ", rows " +
                             std::to_string(trace.n_rows()));
    }
    ObservationBuffer buffer(n, lag);
    const std::vector<RuntimeFlag> observed_flags(n, RuntimeFlag::Observed);
    for (std::size_t r = start_row - lag; r < start_row; ++r) {
        advance_buffer(buffer, trace.row(r), observed_flags);
    }

    PredictionEval eval;
    double se_model = 0.0;
    double se_carry = 0.0;
    std::size_t terms = 0;
    for (std::size_t t = start_row; t < trace.n_rows(); ++t) {
        PredictiveDistribution pred = predict_next(ckpt, buffer, K, mix_seed(seed, t));
        std::vector<std::vector<double>> sorted = pred.samples;
        for (auto& sample : sorted) std::sort(sample.begin(), sample.end());

        PredictionEval::Row row;
        row.iteration = t;
        row.predicted_mean.assign(n, 0.0);
        row.predicted_std.assign(n, 0.0);
        for (const auto& sample : sorted) {
            for (std::size_t i = 0; i < n; ++i) row.predicted_mean[i] += sample[i];
        }
        for (double& v : row.predicted_mean) v /= static_cast<double>(K);
        for (const auto& sample : sorted) {
            for (std::size_t i = 0; i < n; ++i) {
                const double d = sample[i] - row.predicted_mean[i];
                row.predicted_std[i] += d * d;
            }
        }
        for (double& v : row.predicted_std) {
            v = K > 1 ? std::sqrt(v / static_cast<double>(K - 1)) : 0.0;
        }
        row.observed_sorted = trace.row(t);
        std::sort(row.observed_sorted.begin(), row.observed_sorted.end());

        std::vector<double> carry = trace.row(t - 1);
        std::sort(carry.begin(), carry.end());
        for (std::size_t i = 0; i < n; ++i) {
            const double em = row.predicted_mean[i] - row.observed_sorted[i];
            const double ec = carry[i] - row.observed_sorted[i];
            se_model += em * em;
            se_carry += ec * ec;
            ++terms;
        }
        eval.rows.push_back(std::move(row));
        advance_buffer(buffer, trace.row(t), observed_flags);
    }
    eval.steps = eval.rows.size();
    eval.model_rmse = std::sqrt(se_model / static_cast<double>(terms));
    eval.carry_rmse = std::sqrt(se_carry / static_cast<double>(terms));
    return eval;
}

}  // namespace dcsgd

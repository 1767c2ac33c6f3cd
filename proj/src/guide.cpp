#include "dcsgd/guide.hpp"

#include <string>

namespace dcsgd {

Guide::Guide(GuideConfig config) : config_(config) {
    if (config_.hidden == 0 || config_.d_z == 0 || config_.n_workers == 0 ||
        config_.lag == 0) {
        throw ModelError("guide dimensions must be positive");
    }
    const std::size_t d = config_.d_z;
    const std::size_t n = config_.n_workers;
    const std::size_t h = config_.hidden;
    left_ = RnnSpec{n, h, "guide.left"};
    right_ = RnnSpec{n, h, "guide.right"};
    combiner_ = MLPSpec{{d, h}, {Activation::Tanh}, "guide.comb"};
    mean_head_ = MLPSpec{{h, d}, {Activation::Identity}, "guide.mu"};
    std_head_ = MLPSpec{{d, d}, {Activation::Softplus}, "guide.sigma"};
}

void Guide::init_params(ParameterStore& store, Rng& rng) const {
    init_rnn_params(store, left_, rng);
    init_rnn_params(store, right_, rng);
    init_mlp_params(store, combiner_, rng);
    init_mlp_params(store, mean_head_, rng);
    init_mlp_params(store, std_head_, rng);
}

GaussianVars Guide::step(Tape& tape, ParameterStore& store, Var z_prev, Var h_left,
                         Var h_right) const {
    if (tape.value(h_left).size() != config_.hidden ||
        tape.value(h_right).size() != config_.hidden) {
        throw ModelError("guide step: recurrent input width mismatch");
    }
    Var combined = tape.add(mlp_forward(tape, combiner_, store, z_prev),
                            tape.add(h_left, h_right));
    Var h_out = tape.scale(combined, 1.0 / 3.0);
    Var mean = mlp_forward(tape, mean_head_, store, h_out);
    Var std = tape.add_scalar(mlp_forward(tape, std_head_, store, mean), kStdFloor);
    return {mean, std};
}

Guide::Passes Guide::run_passes(Tape& tape, ParameterStore& store,
                                const std::vector<Var>& rows) const {
    const std::size_t len = rows.size();
    if (len == 0) throw ModelError("guide passes: empty window");
    Var zero = tape.constant(std::vector<double>(config_.hidden, 0.0));

    // Forward states over rows[0 .. len-2]: h_left[t] = state after row t-1.
    std::vector<Var> prefix(rows.begin(), rows.end() - 1);
    std::vector<Var> fwd = rnn_forward(tape, left_, store, prefix, RnnDirection::Forward);
    Passes passes;
    passes.h_left.reserve(len);
    passes.h_left.push_back(zero);
    for (std::size_t t = 1; t < len; ++t) passes.h_left.push_back(fwd[t - 1]);

    // Backward states over rows[1 .. len-1], consumed from the end:
    // bwd[k] = state after consuming rows len-1 .. len-1-k, so
    // h_right[t] = bwd[len-2-t] summarizes rows t+1 .. len-1.
    std::vector<Var> suffix(rows.begin() + 1, rows.end());
    std::vector<Var> bwd = rnn_forward(tape, right_, store, suffix, RnnDirection::Backward);
    passes.h_right.assign(len, zero);
    for (std::size_t t = 0; t + 1 < len; ++t) passes.h_right[t] = bwd[len - 2 - t];
    return passes;
}

PosteriorSampleVars Guide::sample_with_passes(Tape& tape, ParameterStore& store, Var z0,
                                              const Passes& passes, Rng& rng) const {
    const std::size_t len = passes.h_left.size();
    PosteriorSampleVars out;
    out.z_seq.reserve(len);
    Var z_prev = z0;
    Var log_q = tape.scalar(0.0);
    std::vector<double> noise(config_.d_z);
    for (std::size_t t = 0; t < len; ++t) {
        GaussianVars q = step(tape, store, z_prev, passes.h_left[t], passes.h_right[t]);
        for (double& e : noise) e = rng.standard_normal();
        Var z = gaussian_reparameterized_sample(tape, q.mean, q.std, noise);
        log_q = tape.add(log_q, tape.gaussian_log_pdf(z, q.mean, q.std));
        out.z_seq.push_back(z);
        z_prev = z;
    }
    out.log_q = log_q;
    return out;
}

PosteriorSampleVars Guide::sample_graph(Tape& tape, ParameterStore& store, Var z0,
                                        const std::vector<Var>& rows, Rng& rng) const {
    return sample_with_passes(tape, store, z0, run_passes(tape, store, rows), rng);
}

PosteriorSample Guide::sample(ParameterStore& store, const std::vector<double>& z0,
                              const LagWindow& window, std::uint64_t seed) const {
    if (window.n_workers() != config_.n_workers) {
        throw ModelError("guide sample: window has " +
                         std::to_string(window.n_workers()) + " workers, expected " +
                         std::to_string(config_.n_workers));
    }
    Tape tape;
    std::vector<Var> rows;
    rows.reserve(window.lag());
    for (const auto& row : window.observations) rows.push_back(tape.constant(row));
    Rng rng(seed);
    PosteriorSampleVars vars = sample_graph(tape, store, tape.constant(z0), rows, rng);
    PosteriorSample out;
    out.z_seq.reserve(vars.z_seq.size());
    for (Var z : vars.z_seq) out.z_seq.push_back({tape.value(z)});
    out.log_q = tape.scalar_value(vars.log_q);
    return out;
}

}  // namespace dcsgd

#include "dcsgd/dmm.hpp"

#include <cmath>
#include <string>

namespace dcsgd {

namespace {

// softplus(x) = 1 at x = log(e - 1); used to start the initial-state std at 1.
constexpr double kSoftplusInvOne = 0.5413248546129181;

}  // namespace

Dmm::Dmm(DmmConfig config) : config_(config) {
    if (config_.d_z == 0 || config_.n_workers == 0 || config_.hidden == 0) {
        throw ModelError("model dimensions must be positive");
    }
    const std::size_t d = config_.d_z;
    const std::size_t n = config_.n_workers;
    const std::size_t h = config_.hidden;
    gate_ = MLPSpec{{d, h, d}, {Activation::ReLU, Activation::Sigmoid}, "dmm.trans.gate"};
    proposal_ = MLPSpec{{d, h, d}, {Activation::ReLU, Activation::Identity}, "dmm.trans.prop"};
    linear_ = MLPSpec{{d, d}, {Activation::Identity}, "dmm.trans.lin"};
    trans_std_ = MLPSpec{{d, d}, {Activation::Softplus}, "dmm.trans.std"};
    emit_mean_ = MLPSpec{{d, h, n}, {Activation::Identity, Activation::Identity}, "dmm.emit.mean"};
    emit_std_ = MLPSpec{{n, h, n}, {Activation::ReLU, Activation::Softplus}, "dmm.emit.std"};
}

void Dmm::init_params(ParameterStore& store, Rng& rng) const {
    init_mlp_params(store, gate_, rng);
    init_mlp_params(store, proposal_, rng);
    init_mlp_params(store, linear_, rng);
    init_mlp_params(store, trans_std_, rng);
    init_mlp_params(store, emit_mean_, rng);
    init_mlp_params(store, emit_std_, rng);
    store.add("dmm.init.mean", {config_.d_z});
    auto& raw = store.add("dmm.init.std_raw", {config_.d_z});
    std::fill(raw.value.begin(), raw.value.end(), kSoftplusInvOne);
}

void Dmm::check_latent(const char* op, std::size_t got) const {
    if (got != config_.d_z) {
        throw ModelError(std::string(op) + ": latent width " + std::to_string(got) +
                         ", expected " + std::to_string(config_.d_z));
    }
}

GaussianVars Dmm::transition(Tape& tape, ParameterStore& store, Var z_prev) const {
    check_latent("transition", tape.value(z_prev).size());
    Var g = mlp_forward(tape, gate_, store, z_prev);
    Var h = mlp_forward(tape, proposal_, store, z_prev);
    Var lin = mlp_forward(tape, linear_, store, z_prev);
    Var one_minus_g = tape.add_scalar(tape.scale(g, -1.0), 1.0);
    Var mean = tape.add(tape.mul(one_minus_g, lin), tape.mul(g, h));
    Var std = tape.add_scalar(
        mlp_forward(tape, trans_std_, store, tape.relu(mean)), kStdFloor);
    return {mean, std};
}

GaussianVars Dmm::emission(Tape& tape, ParameterStore& store, Var z) const {
    check_latent("emission", tape.value(z).size());
    Var mean = mlp_forward(tape, emit_mean_, store, z);
    Var std = tape.add_scalar(mlp_forward(tape, emit_std_, store, mean), kStdFloor);
    return {mean, std};
}

GaussianVars Dmm::initial_state(Tape& tape, ParameterStore& store) const {
    Var mean = tape.param(store, "dmm.init.mean");
    Var std = tape.add_scalar(
        tape.softplus(tape.param(store, "dmm.init.std_raw")), kStdFloor);
    return {mean, std};
}

Var Dmm::log_joint(Tape& tape, ParameterStore& store, const std::vector<Var>& z_seq,
                   const std::vector<Var>& x_seq) const {
    if (z_seq.size() != x_seq.size()) {
        throw ModelError("log_joint: latent/observation length mismatch (" +
                         std::to_string(z_seq.size()) + " vs " +
                         std::to_string(x_seq.size()) + ")");
    }
    if (z_seq.empty()) throw ModelError("log_joint: empty sequence");
    GaussianVars init = initial_state(tape, store);
    Var total = tape.gaussian_log_pdf(z_seq[0], init.mean, init.std);
    for (std::size_t t = 1; t < z_seq.size(); ++t) {
        GaussianVars trans = transition(tape, store, z_seq[t - 1]);
        total = tape.add(total, tape.gaussian_log_pdf(z_seq[t], trans.mean, trans.std));
    }
    for (std::size_t t = 0; t < z_seq.size(); ++t) {
        GaussianVars emit = emission(tape, store, z_seq[t]);
        total = tape.add(total, tape.gaussian_log_pdf(x_seq[t], emit.mean, emit.std));
    }
    return total;
}

GaussianVector Dmm::transition_dist(ParameterStore& store, const LatentState& z_prev) const {
    Tape tape;
    GaussianVars out = transition(tape, store, tape.constant(z_prev.z));
    return {tape.value(out.mean), tape.value(out.std)};
}

GaussianVector Dmm::emission_dist(ParameterStore& store, const LatentState& z) const {
    Tape tape;
    GaussianVars out = emission(tape, store, tape.constant(z.z));
    return {tape.value(out.mean), tape.value(out.std)};
}

GaussianVector Dmm::initial_dist(ParameterStore& store) const {
    Tape tape;
    GaussianVars out = initial_state(tape, store);
    return {tape.value(out.mean), tape.value(out.std)};
}

double Dmm::log_joint_value(ParameterStore& store, const std::vector<LatentState>& z_seq,
                            const std::vector<std::vector<double>>& x_seq) const {
    Tape tape;
    std::vector<Var> zs;
    std::vector<Var> xs;
    zs.reserve(z_seq.size());
    xs.reserve(x_seq.size());
    for (const auto& z : z_seq) zs.push_back(tape.constant(z.z));
    for (const auto& x : x_seq) xs.push_back(tape.constant(x));
    return tape.scalar_value(log_joint(tape, store, zs, xs));
}

std::vector<Dmm::RolloutStep> Dmm::rollout(ParameterStore& store,
                                           const LatentState& z_start,
                                           std::size_t steps, std::uint64_t seed) const {
    if (steps == 0) throw ModelError("rollout: steps must be >= 1");
    check_latent("rollout", z_start.z.size());
    Rng rng(seed);
    std::vector<RolloutStep> out;
    out.reserve(steps);
    LatentState z = z_start;
    for (std::size_t step = 0; step < steps; ++step) {
        GaussianVector trans = transition_dist(store, z);
        LatentState next;
        next.z.resize(config_.d_z);
        for (std::size_t i = 0; i < config_.d_z; ++i) {
            next.z[i] = rng.normal(trans.mean[i], trans.std[i]);
            if (!std::isfinite(next.z[i])) {
                throw ModelError("rollout: non-finite latent at step " +
                                 std::to_string(step));
            }
        }
        out.push_back({next, emission_dist(store, next)});
        z = std::move(next);
    }
    return out;
}

}  // namespace dcsgd

#include "dcsgd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace dcsgd {

namespace {

constexpr int kCheckpointVersion = 1;
constexpr const char* kCheckpointFormat = "dcsgd-checkpoint";

std::vector<Var> rows_on_tape(Tape& tape, const LagWindow& window) {
    std::vector<Var> rows;
    rows.reserve(window.lag());
    for (const auto& row : window.observations) rows.push_back(tape.constant(row));
    return rows;
}

}  // namespace

Var elbo_graph(Tape& tape, const Dmm& dmm, const Guide& guide, ParameterStore& theta,
               ParameterStore& phi, const LagWindow& window, Rng& rng,
               std::size_t sample_count) {
    if (sample_count == 0) throw TrainError("elbo: sample count must be >= 1");
    if (window.n_workers() != dmm.config().n_workers) {
        throw TrainError("elbo: window worker count mismatch");
    }
    std::vector<Var> rows = rows_on_tape(tape, window);
    Guide::Passes passes = guide.run_passes(tape, phi, rows);
    Var z0 = tape.param(theta, "dmm.init.mean");
    Var total = tape.scalar(0.0);
    for (std::size_t s = 0; s < sample_count; ++s) {
        PosteriorSampleVars q = guide.sample_with_passes(tape, phi, z0, passes, rng);
        Var log_p = dmm.log_joint(tape, theta, q.z_seq, rows);
        total = tape.add(total, tape.sub(log_p, q.log_q));
    }
    return tape.scale(total, 1.0 / static_cast<double>(sample_count));
}

double elbo_value(const Dmm& dmm, const Guide& guide, ParameterStore& theta,
                  ParameterStore& phi, const LagWindow& window, std::uint64_t seed,
                  std::size_t sample_count) {
    Tape tape;
    Rng rng(seed);
    return tape.scalar_value(
        elbo_graph(tape, dmm, guide, theta, phi, window, rng, sample_count));
}

ModelCheckpoint train(const RuntimeTrace& trace, const TrainConfig& config) {
    if (config.epochs > 0 && trace.n_rows() < config.lag + 1) {
        throw TrainError("train: trace has " + std::to_string(trace.n_rows()) +
                         " rows, need at least lag+1 = " +
                         std::to_string(config.lag + 1));
    }
    if (config.minibatch == 0) throw TrainError("train: minibatch must be >= 1");

    ModelCheckpoint ckpt;
    ckpt.dmm = DmmConfig{config.d_z, trace.n_workers(), config.dmm_hidden};
    ckpt.guide = GuideConfig{config.guide_hidden, config.d_z, trace.n_workers(),
                             config.lag};
    ckpt.normalization = fit_normalization(trace, config.lag);

    Dmm dmm(ckpt.dmm);
    Guide guide(ckpt.guide);
    Rng theta_rng(mix_seed(config.seed, 1));
    Rng phi_rng(mix_seed(config.seed, 2));
    dmm.init_params(ckpt.theta, theta_rng);
    guide.init_params(ckpt.phi, phi_rng);

    if (config.epochs == 0) return ckpt;

    const RuntimeTrace normalized = normalize(trace, ckpt.normalization);
    const std::size_t n_windows = normalized.n_rows() - config.lag + 1;
    std::vector<std::size_t> order(n_windows);
    std::iota(order.begin(), order.end(), 0);

    Rng shuffle_rng(mix_seed(config.seed, 3));
    std::uint64_t noise_counter = 0;
    double epoch_elbo = 0.0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
        double elbo_sum = 0.0;
        for (std::size_t begin = 0; begin < n_windows; begin += config.minibatch) {
            const std::size_t end = std::min(begin + config.minibatch, n_windows);
            ckpt.theta.zero_grad();
            ckpt.phi.zero_grad();
            for (std::size_t i = begin; i < end; ++i) {
                const LagWindow window = window_at(normalized, order[i], config.lag);
                Tape tape;
                Rng noise_rng(mix_seed(config.seed, 0x1000 + noise_counter++));
                Var elbo = elbo_graph(tape, dmm, guide, ckpt.theta, ckpt.phi, window,
                                      noise_rng, config.elbo_samples);
                const double value = tape.scalar_value(elbo);
                if (!std::isfinite(value)) {
                    throw TrainError("train: non-finite ELBO at epoch " +
                                     std::to_string(epoch) + ", window " +
                                     std::to_string(order[i]));
                }
                elbo_sum += value;
                // Ascend the mean ELBO: backprop -(1/batch) * elbo.
                Var loss = tape.scale(elbo, -1.0 / static_cast<double>(end - begin));
                tape.backward(loss);
            }
            adam_step(ckpt.theta, config.adam);
            adam_step(ckpt.phi, config.adam);
        }
        epoch_elbo = elbo_sum / static_cast<double>(n_windows);
    }
    ckpt.trained_epochs = config.epochs;
    ckpt.final_elbo = epoch_elbo;
    ckpt.trained = true;
    return ckpt;
}

namespace {

nlohmann::json store_to_json(const ParameterStore& store) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [name, entry] : store.entries()) {
        out[name] = {{"shape", entry.shape}, {"value", entry.value}};
    }
    return out;
}

void store_from_json(const nlohmann::json& in, ParameterStore& store,
                     const char* which) {
    std::size_t seen = 0;
    for (auto& [name, entry] : store.entries()) {
        auto it = in.find(name);
        if (it == in.end()) {
            throw CheckpointError(std::string(which) + " store missing parameter " +
                                  name);
        }
        const auto shape = (*it).at("shape").get<std::vector<std::size_t>>();
        if (shape != entry.shape) {
            throw CheckpointError(std::string(which) + " parameter " + name +
                                  " has shape inconsistent with the declared config");
        }
        entry.value = (*it).at("value").get<std::vector<double>>();
        if (entry.value.size() != entry.size()) {
            throw CheckpointError(std::string(which) + " parameter " + name +
                                  " has wrong element count");
        }
        ++seen;
    }
    if (seen != in.size()) {
        throw CheckpointError(std::string(which) + " store has unexpected parameters");
    }
}

}  // namespace

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path) {
    nlohmann::json doc;
    doc["format"] = kCheckpointFormat;
    doc["version"] = kCheckpointVersion;
    doc["dmm"] = {{"d_z", ckpt.dmm.d_z},
                  {"n_workers", ckpt.dmm.n_workers},
                  {"hidden", ckpt.dmm.hidden}};
    doc["guide"] = {{"hidden", ckpt.guide.hidden},
                    {"d_z", ckpt.guide.d_z},
                    {"n_workers", ckpt.guide.n_workers},
                    {"lag", ckpt.guide.lag}};
    doc["normalization"] = {{"scale", ckpt.normalization.scale}};
    doc["metadata"] = {{"trained_epochs", ckpt.trained_epochs},
                       {"final_elbo", ckpt.final_elbo},
                       {"trained", ckpt.trained}};
    doc["theta"] = store_to_json(ckpt.theta);
    doc["phi"] = store_to_json(ckpt.phi);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot open " + path + " for writing");
    out << doc.dump(1, '\t') << '\n';
    if (!out) throw CheckpointError("write failed for " + path);
}

ModelCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("corrupt checkpoint " + path + ": " + e.what());
    }
    try {
        if (doc.at("format") != kCheckpointFormat) {
            throw CheckpointError("not a model checkpoint: " + path);
        }
        if (doc.at("version") != kCheckpointVersion) {
            throw CheckpointError("unsupported checkpoint version in " + path);
        }
        ModelCheckpoint ckpt;
        ckpt.dmm.d_z = doc.at("dmm").at("d_z").get<std::size_t>();
        ckpt.dmm.n_workers = doc.at("dmm").at("n_workers").get<std::size_t>();
        ckpt.dmm.hidden = doc.at("dmm").at("hidden").get<std::size_t>();
        ckpt.guide.hidden = doc.at("guide").at("hidden").get<std::size_t>();
        ckpt.guide.d_z = doc.at("guide").at("d_z").get<std::size_t>();
        ckpt.guide.n_workers = doc.at("guide").at("n_workers").get<std::size_t>();
        ckpt.guide.lag = doc.at("guide").at("lag").get<std::size_t>();
        ckpt.normalization.scale = doc.at("normalization").at("scale").get<double>();
        ckpt.trained_epochs = doc.at("metadata").at("trained_epochs").get<std::size_t>();
        ckpt.final_elbo = doc.at("metadata").at("final_elbo").get<double>();
        ckpt.trained = doc.at("metadata").at("trained").get<bool>();
        if (ckpt.dmm.d_z != ckpt.guide.d_z) {
            throw CheckpointError("latent width differs between model and guide in " +
                                  path);
        }
        // Rebuild the expected parameter layout, then require the stored
        // entries to match it exactly.
        Dmm dmm(ckpt.dmm);
        Guide guide(ckpt.guide);
        Rng scratch(0);
        dmm.init_params(ckpt.theta, scratch);
        guide.init_params(ckpt.phi, scratch);
        store_from_json(doc.at("theta"), ckpt.theta, "model");
        store_from_json(doc.at("phi"), ckpt.phi, "guide");
        return ckpt;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("corrupt checkpoint " + path + ": " + e.what());
    } catch (const ModelError& e) {
        throw CheckpointError("invalid checkpoint " + path + ": " + e.what());
    }
}

}  // namespace dcsgd

#pragma once

// Joint training of the generative model and the inference network by
// stochastic maximization of the reparameterized ELBO over lag windows
// sliced (stride 1) from a runtime trace, plus checkpoint serialization.

#include <cstdint>
#include <string>
#include <vector>

#include "dcsgd/dmm.hpp"
#include "dcsgd/guide.hpp"
#include "dcsgd/ndmath.hpp"
#include "dcsgd/trace.hpp"

namespace dcsgd {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t minibatch = 8;  // windows per optimizer step
    std::uint64_t seed = 0;
    AdamConfig adam{};
    std::size_t lag = 20;
    std::size_t elbo_samples = 1;
    std::size_t d_z = 32;
    std::size_t dmm_hidden = 64;
    std::size_t guide_hidden = 64;
};

struct ModelCheckpoint {
    DmmConfig dmm;
    GuideConfig guide;
    ParameterStore theta;
    ParameterStore phi;
    NormalizationSpec normalization;
    std::size_t trained_epochs = 0;
    double final_elbo = 0.0;
    bool trained = false;
};

// Single-sample-averaged ELBO estimate for one normalized window, left on the
// tape so callers can backprop into both stores. The guide's first-step
// z_prev is the model's learned initial mean (gradient flows into it).
Var elbo_graph(Tape& tape, const Dmm& dmm, const Guide& guide, ParameterStore& theta,
               ParameterStore& phi, const LagWindow& window, Rng& rng,
               std::size_t sample_count);

double elbo_value(const Dmm& dmm, const Guide& guide, ParameterStore& theta,
                  ParameterStore& phi, const LagWindow& window, std::uint64_t seed,
                  std::size_t sample_count);

// Fits normalization from the first window, slides windows with stride 1,
// and ascends the mean ELBO with Adam. Deterministic given config.seed.
ModelCheckpoint train(const RuntimeTrace& trace, const TrainConfig& config);

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path);
ModelCheckpoint load_checkpoint(const std::string& path);

}  // namespace dcsgd

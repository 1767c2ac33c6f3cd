#pragma once

// Deep Markov model over normalized per-worker runtime vectors: a gated
// Gaussian transition over a latent chain plus a Gaussian emission, with a
// learned initial-state distribution. All networks are built on the tape in
// ndmath so densities are differentiable for training.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "dcsgd/ndmath.hpp"

namespace dcsgd {

class ModelError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct LatentState {
    std::vector<double> z;
};

struct GaussianVector {
    std::vector<double> mean;
    std::vector<double> std;
};

// Mean/std pair living on a tape (diagonal Gaussian).
struct GaussianVars {
    Var mean;
    Var std;
};

struct DmmConfig {
    std::size_t d_z = 32;
    std::size_t n_workers = 0;
    std::size_t hidden = 64;
};

// Additive floor applied to every std output after Softplus.
inline constexpr double kStdFloor = 1e-6;

class Dmm {
  public:
    explicit Dmm(DmmConfig config);

    const DmmConfig& config() const { return config_; }

    // Creates and glorot-initializes every model parameter in `store`.
    void init_params(ParameterStore& store, Rng& rng) const;

    // Gated transition p(z_t | z_{t-1}):
    //   gate     = MLP(z, ReLU, Sigmoid)
    //   proposal = MLP(z, ReLU, Identity)
    //   mean     = (1-gate) * Linear(z) + gate * proposal
    //   std      = Softplus(Linear(ReLU(mean))) + floor
    GaussianVars transition(Tape& tape, ParameterStore& store, Var z_prev) const;

    // Emission p(x_t | z_t): mean via two stacked linear layers, std via
    // MLP(mean, ReLU, Softplus) + floor. Output width n_workers.
    GaussianVars emission(Tape& tape, ParameterStore& store, Var z) const;

    // Learned distribution of the first latent in a window.
    GaussianVars initial_state(Tape& tape, ParameterStore& store) const;

    // log p(z_seq, x_seq) = log N(z_1 | init) + sum_t log N(z_t | transition(z_{t-1}))
    //                       + sum_t log N(x_t | emission(z_t)).
    Var log_joint(Tape& tape, ParameterStore& store, const std::vector<Var>& z_seq,
                  const std::vector<Var>& x_seq) const;

    // Value-level conveniences (each builds a throwaway tape).
    GaussianVector transition_dist(ParameterStore& store, const LatentState& z_prev) const;
    GaussianVector emission_dist(ParameterStore& store, const LatentState& z) const;
    GaussianVector initial_dist(ParameterStore& store) const;
    double log_joint_value(ParameterStore& store, const std::vector<LatentState>& z_seq,
                           const std::vector<std::vector<double>>& x_seq) const;

    struct RolloutStep {
        LatentState z;
        GaussianVector emission;
    };

    // Ancestral sampling from the transition for `steps` steps starting at
    // z_start (not resampled), recording the emission distribution of each
    // visited state. Deterministic given seed.
    std::vector<RolloutStep> rollout(ParameterStore& store, const LatentState& z_start,
                                     std::size_t steps, std::uint64_t seed) const;

  private:
    void check_latent(const char* op, std::size_t got) const;

    DmmConfig config_;
    MLPSpec gate_;
    MLPSpec proposal_;
    MLPSpec linear_;
    MLPSpec trans_std_;
    MLPSpec emit_mean_;
    MLPSpec emit_std_;
};

}  // namespace dcsgd

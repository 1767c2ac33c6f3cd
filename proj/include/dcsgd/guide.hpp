#pragma once

// Amortized inference network: a structured left-right recurrent guide that
// produces per-step diagonal-Gaussian posteriors over latent states given a
// lag window of normalized observations, and samples latent trajectories by
// sequential reparameterization.

#include <cstdint>
#include <vector>

#include "dcsgd/dmm.hpp"
#include "dcsgd/ndmath.hpp"
#include "dcsgd/trace.hpp"

namespace dcsgd {

struct GuideConfig {
    std::size_t hidden = 64;
    std::size_t d_z = 32;
    std::size_t n_workers = 0;
    std::size_t lag = 20;
};

struct PosteriorSample {
    std::vector<LatentState> z_seq;
    double log_q = 0.0;
};

// Tape-resident counterpart used inside the ELBO.
struct PosteriorSampleVars {
    std::vector<Var> z_seq;
    Var log_q;
};

class Guide {
  public:
    explicit Guide(GuideConfig config);

    const GuideConfig& config() const { return config_; }

    void init_params(ParameterStore& store, Rng& rng) const;

    // Combiner + heads for one step:
    //   h_out = (tanh(Linear(z_prev)) + h_left + h_right) / 3
    //   mean  = Linear(h_out)
    //   std   = Softplus(Linear(mean)) + floor
    GaussianVars step(Tape& tape, ParameterStore& store, Var z_prev, Var h_left,
                      Var h_right) const;

    // Directional recurrent summaries for every step of an l-row window.
    // h_left[t] summarizes rows [0, t) and h_right[t] summarizes rows (t, l);
    // boundary entries are zero vectors. Computed once per window and reused
    // across samples.
    struct Passes {
        std::vector<Var> h_left;
        std::vector<Var> h_right;
    };
    Passes run_passes(Tape& tape, ParameterStore& store,
                      const std::vector<Var>& rows) const;

    // Sequentially samples z_1..z_l by reparameterization, feeding each draw
    // into the next step, and accumulates the guide log-density. z0 is the
    // z_prev input of the first step (the model's learned initial mean).
    PosteriorSampleVars sample_with_passes(Tape& tape, ParameterStore& store, Var z0,
                                           const Passes& passes, Rng& rng) const;

    // run_passes + sample_with_passes over a window already on the tape.
    PosteriorSampleVars sample_graph(Tape& tape, ParameterStore& store, Var z0,
                                     const std::vector<Var>& rows, Rng& rng) const;

    // Value-level sampling from a normalized lag window; deterministic given
    // seed. z0 as above.
    PosteriorSample sample(ParameterStore& store, const std::vector<double>& z0,
                           const LagWindow& window, std::uint64_t seed) const;

  private:
    GuideConfig config_;
    RnnSpec left_;
    RnnSpec right_;
    MLPSpec combiner_;
    MLPSpec mean_head_;
    MLPSpec std_head_;
};

}  // namespace dcsgd

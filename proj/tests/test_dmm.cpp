#include <cmath>
#include <vector>

#include "dcsgd/dmm.hpp"
#include "dcsgd/mathutil.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace dcsgd;

namespace {

// Oracle evaluation of log_joint from value-level distributions and an
// independently written diagonal-Gaussian density.
double log_joint_oracle(const Dmm& dmm, ParameterStore& theta,
                        const std::vector<LatentState>& z_seq,
                        const std::vector<std::vector<double>>& x_seq) {
    const GaussianVector init = dmm.initial_dist(theta);
    double total = oracles::diag_gaussian_log_pdf(z_seq[0].z, init.mean, init.std);
    for (std::size_t t = 1; t < z_seq.size(); ++t) {
        const GaussianVector trans = dmm.transition_dist(theta, z_seq[t - 1]);
        total += oracles::diag_gaussian_log_pdf(z_seq[t].z, trans.mean, trans.std);
    }
    for (std::size_t t = 0; t < x_seq.size(); ++t) {
        const GaussianVector emis = dmm.emission_dist(theta, z_seq[t]);
        total += oracles::diag_gaussian_log_pdf(x_seq[t], emis.mean, emis.std);
    }
    return total;
}

}  // namespace

TEST_CASE("gate pinned shut: transition mean follows the linear path") {
    const oracles::SsmParams target{0.8, 0.1, 0.3, 1.0, 0.5, 0.1, 0.2, 0.4};
    oracles::LinGaussModel m = oracles::make_linear_gaussian_model(target);
    Dmm dmm(m.config);
    for (double z : {-1.5, 0.0, 0.4, 2.0}) {
        const GaussianVector t = dmm.transition_dist(m.theta, {{z}});
        CHECK(t.mean[0] ==
              doctest::Approx(target.trans_w * z + target.trans_b).epsilon(1e-12));
        CHECK(t.std[0] == doctest::Approx(target.trans_std).epsilon(1e-9));
    }
}

TEST_CASE("gate pinned open: transition mean follows the proposal network") {
    DmmConfig cfg{2, 2, 4};
    Dmm dmm(cfg);
    ParameterStore theta;
    Rng rng(5);
    dmm.init_params(theta, rng);

    oracles::set_values(theta, "dmm.trans.gate.w0", std::vector<double>(8, 0.0));
    oracles::set_values(theta, "dmm.trans.gate.b0", std::vector<double>(4, 0.0));
    oracles::set_values(theta, "dmm.trans.gate.w1", std::vector<double>(8, 0.0));
    oracles::set_values(theta, "dmm.trans.gate.b1", {40.0, 40.0});  // gate ~ 1
    oracles::set_values(theta, "dmm.trans.prop.w0", std::vector<double>(8, 0.0));
    oracles::set_values(theta, "dmm.trans.prop.b0", {1.0, -1.0, 2.0, 0.0});
    oracles::set_values(theta, "dmm.trans.prop.w1",
                        {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8});
    oracles::set_values(theta, "dmm.trans.prop.b1", {0.3, -0.4});
    // A loud linear path that must be ignored when the gate saturates.
    oracles::set_values(theta, "dmm.trans.lin.w0", {9.0, 9.0, 9.0, 9.0});
    oracles::set_values(theta, "dmm.trans.lin.b0", {9.0, 9.0});

    // relu(b0) = {1, 0, 2, 0}; w1 rows dot it to {0.7, 1.9}; plus b1.
    const GaussianVector t = dmm.transition_dist(theta, {{0.3, -0.5}});
    CHECK(t.mean[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(t.mean[1] == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("transition log-density gradient matches finite differences") {
    DmmConfig cfg{2, 3, 3};
    Dmm dmm(cfg);
    ParameterStore theta, aux;
    Rng rng(9);
    dmm.init_params(theta, rng);
    aux.add("z", {2}).value = {0.31, -0.47};
    aux.add("znext", {2}).value = {0.12, 0.55};

    const auto build = [&](Tape& tape) {
        const GaussianVars trans = dmm.transition(tape, theta, tape.param(aux, "z"));
        return tape.gaussian_log_pdf(tape.param(aux, "znext"), trans.mean, trans.std);
    };
    const auto value = [&] {
        Tape tape;
        return tape.scalar_value(build(tape));
    };
    const auto backward = [&] {
        theta.zero_grad();
        aux.zero_grad();
        Tape tape;
        tape.backward(build(tape));
    };
    const auto report = oracles::check_gradients({&theta, &aux}, value, backward);
    CAPTURE(report.worst);
    CHECK(report.max_rel <= 1e-4);
}

TEST_CASE("emission with zeroed parameters and linearity in z") {
    DmmConfig cfg{2, 3, 4};
    Dmm dmm(cfg);
    ParameterStore theta;
    Rng rng(11);
    dmm.init_params(theta, rng);

    ParameterStore zeroed = theta;
    for (auto& [name, entry] : zeroed.entries()) {
        if (name.rfind("dmm.emit", 0) == 0) entry.value.assign(entry.size(), 0.0);
    }
    const GaussianVector z0 = dmm.emission_dist(zeroed, {{0.7, -0.3}});
    for (double v : z0.mean) CHECK(v == 0.0);
    for (double s : z0.std) {
        CHECK(s == doctest::Approx(std::log(2.0) + kStdFloor).epsilon(1e-12));
    }

    // With zero biases the stacked linear mean is homogeneous in z.
    ParameterStore homog = theta;
    oracles::set_values(homog, "dmm.emit.mean.b0", std::vector<double>(4, 0.0));
    oracles::set_values(homog, "dmm.emit.mean.b1", std::vector<double>(3, 0.0));
    const GaussianVector one = dmm.emission_dist(homog, {{0.4, 0.9}});
    const GaussianVector two = dmm.emission_dist(homog, {{0.8, 1.8}});
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(two.mean[i] == doctest::Approx(2.0 * one.mean[i]).epsilon(1e-12));
    }
}

TEST_CASE("emission sampling matches its own analytic moments") {
    DmmConfig cfg{2, 2, 4};
    Dmm dmm(cfg);
    ParameterStore theta;
    Rng rng(13);
    dmm.init_params(theta, rng);
    const GaussianVector emis = dmm.emission_dist(theta, {{0.5, -0.2}});

    Rng sampler(99);
    const std::size_t n = 10000;
    std::vector<double> draws;
    draws.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        draws.push_back(sampler.normal(emis.mean[0], emis.std[0]));
    }
    const double se = emis.std[0] / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(oracles::mean_of(draws) - emis.mean[0]) < 3.0 * se);
}

TEST_CASE("log_joint matches the independent density oracle") {
    DmmConfig cfg{2, 3, 4};
    Dmm dmm(cfg);
    ParameterStore theta;
    Rng rng(17);
    dmm.init_params(theta, rng);

    Rng data(18);
    std::vector<LatentState> z_seq;
    std::vector<std::vector<double>> x_seq;
    for (int t = 0; t < 4; ++t) {
        z_seq.push_back({{data.normal(0, 1), data.normal(0, 1)}});
        x_seq.push_back({data.normal(0.5, 0.3), data.normal(0.5, 0.3),
                         data.normal(0.5, 0.3)});
    }
    const double got = dmm.log_joint_value(theta, z_seq, x_seq);
    const double want = log_joint_oracle(dmm, theta, z_seq, x_seq);
    CHECK(got == doctest::Approx(want).epsilon(1e-10));

    // Single-step factorization.
    const std::vector<LatentState> z1(z_seq.begin(), z_seq.begin() + 1);
    const std::vector<std::vector<double>> x1(x_seq.begin(), x_seq.begin() + 1);
    CHECK(dmm.log_joint_value(theta, z1, x1) ==
          doctest::Approx(log_joint_oracle(dmm, theta, z1, x1)).epsilon(1e-10));

    // Additivity: the suffix contributes exactly its conditional terms.
    const std::vector<LatentState> z2(z_seq.begin(), z_seq.begin() + 2);
    const std::vector<std::vector<double>> x2(x_seq.begin(), x_seq.begin() + 2);
    double suffix = 0.0;
    for (std::size_t t = 2; t < 4; ++t) {
        const GaussianVector trans = dmm.transition_dist(theta, z_seq[t - 1]);
        const GaussianVector emis = dmm.emission_dist(theta, z_seq[t]);
        suffix += oracles::diag_gaussian_log_pdf(z_seq[t].z, trans.mean, trans.std);
        suffix += oracles::diag_gaussian_log_pdf(x_seq[t], emis.mean, emis.std);
    }
    CHECK(got == doctest::Approx(dmm.log_joint_value(theta, z2, x2) + suffix)
                     .epsilon(1e-10));
}

TEST_CASE("log_joint validates sequence lengths and dimensions") {
    DmmConfig cfg{2, 2, 4};
    Dmm dmm(cfg);
    ParameterStore theta;
    Rng rng(19);
    dmm.init_params(theta, rng);
    const std::vector<LatentState> z2 = {{{0.1, 0.2}}, {{0.3, 0.4}}};
    const std::vector<std::vector<double>> x1 = {{0.5, 0.5}};
    CHECK_THROWS_AS(dmm.log_joint_value(theta, z2, x1), ModelError);
    CHECK_THROWS_AS(dmm.log_joint_value(theta, {}, {}), ModelError);
    CHECK_THROWS_AS(dmm.transition_dist(theta, {{0.1}}), ModelError);
}

TEST_CASE("wider emission noise lowers the density at the mean") {
    const oracles::SsmParams narrow{0.8, 0.1, 0.3, 1.0, 0.5, 0.1, 0.2, 0.4};
    oracles::SsmParams wide = narrow;
    wide.emit_std = 0.2;
    oracles::LinGaussModel mn = oracles::make_linear_gaussian_model(narrow);
    oracles::LinGaussModel mw = oracles::make_linear_gaussian_model(wide);
    Dmm dmm(mn.config);

    const std::vector<LatentState> z_seq = {{{0.2}}, {{0.3}}};
    // Observations pinned to the emission means of both models.
    std::vector<std::vector<double>> x_seq;
    for (const auto& z : z_seq) x_seq.push_back(dmm.emission_dist(mn.theta, z).mean);
    CHECK(dmm.log_joint_value(mw.theta, z_seq, x_seq) <
          dmm.log_joint_value(mn.theta, z_seq, x_seq));
}

TEST_CASE("rollout shapes, determinism, and degenerate noise") {
    const oracles::SsmParams target{0.9, 0.05, 0.2, 1.0, 0.5, 0.1, 0.2, 0.4};
    oracles::LinGaussModel m = oracles::make_linear_gaussian_model(target);
    Dmm dmm(m.config);

    const auto one = dmm.rollout(m.theta, {{0.4}}, 1, 7);
    CHECK(one.size() == 1);

    const auto a = dmm.rollout(m.theta, {{0.4}}, 5, 7);
    const auto b = dmm.rollout(m.theta, {{0.4}}, 5, 7);
    REQUIRE(a.size() == 5);
    for (std::size_t t = 0; t < 5; ++t) {
        CHECK(a[t].z.z == b[t].z.z);
        CHECK(a[t].emission.mean == b[t].emission.mean);
    }

    // Transition std forced to the 1e-6 floor: the trajectory tracks the
    // iterated means to within the accumulated floor noise.
    ParameterStore quiet = m.theta;
    oracles::set_values(quiet, "dmm.trans.std.b0", {-40.0});
    const auto steps = dmm.rollout(quiet, {{0.4}}, 5, 11);
    double mean = 0.4;
    for (std::size_t t = 0; t < 5; ++t) {
        mean = m.effective.trans_w * mean + m.effective.trans_b;
        CHECK(steps[t].z.z[0] == doctest::Approx(mean).epsilon(1e-4));
    }
}

TEST_CASE("rollout first-step statistics match the transition distribution") {
    DmmConfig cfg{2, 2, 4};
    Dmm dmm(cfg);
    ParameterStore theta;
    Rng rng(23);
    dmm.init_params(theta, rng);
    const LatentState start{{0.3, -0.6}};
    const GaussianVector want = dmm.transition_dist(theta, start);

    const std::size_t n = 10000;
    std::vector<double> firsts;
    firsts.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        firsts.push_back(dmm.rollout(theta, start, 1, 1000 + i)[0].z.z[0]);
    }
    const double se = want.std[0] / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(oracles::mean_of(firsts) - want.mean[0]) < 3.0 * se);
    CHECK(oracles::sample_std(firsts) == doctest::Approx(want.std[0]).epsilon(0.05));
}

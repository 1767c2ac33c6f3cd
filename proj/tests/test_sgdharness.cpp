#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "dcsgd/sgdharness.hpp"
#include "dcsgd/trainer.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace dcsgd;

namespace {

// The harness derives each worker's sampling stream from
// mix_seed(mix_seed(mix_seed(run_seed, iteration), kSampleStream), worker);
// pinned here so the batch-SGD mirror can reproduce it exactly.
constexpr std::uint64_t kSampleStream = 0x5a;

RuntimeTrace random_trace(std::size_t rows, std::size_t workers, std::uint64_t seed,
                          double spread = 0.8) {
    Rng rng(seed);
    std::vector<std::vector<double>> data(rows, std::vector<double>(workers));
    for (auto& row : data) {
        for (double& v : row) v = 0.6 + spread * rng.uniform01();
    }
    return RuntimeTrace(workers, std::move(data));
}

double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                    : std::exp(z) / (1.0 + std::exp(z));
}

double margin(const ToyTask& task, const std::vector<double>& theta,
              const std::vector<double>& x) {
    double z = theta[task.data.dim];
    for (std::size_t d = 0; d < task.data.dim; ++d) z += theta[d] * x[d];
    return z;
}

// Independent re-implementation of one worker's mean minibatch gradient.
std::vector<double> mirror_worker_gradient(const ToyTask& task,
                                           const std::vector<double>& theta,
                                           std::uint64_t iter_seed, std::size_t worker,
                                           std::size_t count) {
    Rng rng(mix_seed(mix_seed(iter_seed, kSampleStream), worker));
    const std::size_t n_train = task.data.train_x.size();
    std::vector<double> grad(task.data.dim + 1, 0.0);
    for (std::size_t s = 0; s < count; ++s) {
        const std::size_t idx =
            static_cast<std::size_t>(rng.uniform01() * static_cast<double>(n_train)) %
            n_train;
        const std::vector<double>& x = task.data.train_x[idx];
        const double y = task.data.train_y[idx];
        const double z = margin(task, theta, x);
        const double r = task.kind == TaskKind::Logistic ? sigmoid(z) - y : z - y;
        for (std::size_t d = 0; d < task.data.dim; ++d) grad[d] += r * x[d];
        grad[task.data.dim] += r;
    }
    for (double& g : grad) g /= static_cast<double>(count);
    return grad;
}

}  // namespace

TEST_CASE("task builders split 80/20 deterministically") {
    const ToyTask logistic = make_logistic_task(200, 3, 16, 0.5, 1);
    CHECK(logistic.data.dim == 3);
    CHECK(logistic.data.train_x.size() == 160);
    CHECK(logistic.data.val_x.size() == 40);
    CHECK(logistic.theta == std::vector<double>(4, 0.0));
    for (double y : logistic.data.train_y) CHECK((y == 0.0 || y == 1.0));

    const ToyTask again = make_logistic_task(200, 3, 16, 0.5, 1);
    CHECK(logistic.data.train_x == again.data.train_x);
    const ToyTask other = make_logistic_task(200, 3, 16, 0.5, 2);
    CHECK(logistic.data.train_x != other.data.train_x);

    const ToyTask linreg = make_linreg_task(100, 2, 8, 0.1, 3);
    CHECK(linreg.kind == TaskKind::LinearRegression);
    bool non_binary = false;
    for (double y : linreg.data.train_y) {
        if (y != 0.0 && y != 1.0) non_binary = true;
    }
    CHECK(non_binary);
    CHECK_THROWS_WITH_AS(make_logistic_task(5, 2, 4, 0.5, 1),
                         doctest::Contains("dataset too small"), HarnessError);
}

TEST_CASE("dataset losses match hand-computed cross-entropy and squared error") {
    ToyTask task = make_logistic_task(50, 2, 4, 0.5, 7);
    task.theta = {0.4, -0.7, 0.2};
    double expected = 0.0;
    for (std::size_t i = 0; i < task.data.train_x.size(); ++i) {
        const double z = margin(task, task.theta, task.data.train_x[i]);
        const double p = sigmoid(z);
        const double y = task.data.train_y[i];
        expected += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    }
    expected /= static_cast<double>(task.data.train_x.size());
    CHECK(train_loss(task) == doctest::Approx(expected).epsilon(1e-10));

    ToyTask reg = make_linreg_task(50, 2, 4, 0.1, 8);
    reg.theta = {0.1, 0.2, -0.3};
    double sq = 0.0;
    for (std::size_t i = 0; i < reg.data.val_x.size(); ++i) {
        const double r = margin(reg, reg.theta, reg.data.val_x[i]) - reg.data.val_y[i];
        sq += 0.5 * r * r;
    }
    sq /= static_cast<double>(reg.data.val_x.size());
    CHECK(val_loss(reg) == doctest::Approx(sq).epsilon(1e-10));
}

TEST_CASE("sampled gradients are unbiased for the full-batch direction") {
    ToyTask task = make_logistic_task(400, 4, 16, 0.5, 11);
    task.theta = {0.3, -0.2, 0.5, 0.1};  // away from the optimum

    std::vector<double> full(task.data.dim + 1, 0.0);
    for (std::size_t i = 0; i < task.data.train_x.size(); ++i) {
        const std::vector<double>& x = task.data.train_x[i];
        const double r =
            sigmoid(margin(task, task.theta, x)) - task.data.train_y[i];
        for (std::size_t d = 0; d < task.data.dim; ++d) full[d] += r * x[d];
        full[task.data.dim] += r;
    }
    for (double& g : full) g /= static_cast<double>(task.data.train_x.size());

    Rng rng(13);
    std::vector<double> mean(task.data.dim + 1, 0.0);
    const std::size_t draws = 10000;
    for (std::size_t s = 0; s < draws; ++s) {
        const std::vector<double> g = worker_gradient(task, rng, 1);
        for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += g[d];
    }
    for (double& g : mean) g /= static_cast<double>(draws);

    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t d = 0; d < mean.size(); ++d) {
        dot += mean[d] * full[d];
        na += mean[d] * mean[d];
        nb += full[d] * full[d];
    }
    const double angle_deg =
        std::acos(dot / std::sqrt(na * nb)) * 180.0 / M_PI;
    CHECK(angle_deg < 2.0);
}

TEST_CASE("full_sync replays exactly as synchronous batch SGD") {
    const ToyTask task = make_logistic_task(120, 2, 8, 0.4, 17);
    const RuntimeTrace trace = random_trace(6, 4, 18);
    const std::uint64_t seed = 21;
    const HarnessConfig config{0.02, 20, false};

    // Mirror: at each iteration every worker contributes a mean gradient on
    // its own stream; theta steps by lr/n times the ascending-id sum.
    std::vector<double> theta = task.theta;
    const std::size_t per_worker = task.minibatch / trace.n_workers();
    std::vector<std::vector<double>> mirror_thetas;
    for (std::size_t t = 0; t < trace.n_rows(); ++t) {
        const std::uint64_t iter_seed = mix_seed(seed, t);
        std::vector<double> update(theta.size(), 0.0);
        for (std::size_t w = 0; w < trace.n_workers(); ++w) {
            const std::vector<double> g =
                mirror_worker_gradient(task, theta, iter_seed, w, per_worker);
            for (std::size_t d = 0; d < update.size(); ++d) update[d] += g[d];
        }
        const double step = task.lr / static_cast<double>(trace.n_workers());
        for (std::size_t d = 0; d < theta.size(); ++d) theta[d] -= step * update[d];
        mirror_thetas.push_back(theta);
    }

    // Layer 1: run_iteration mutates a live task identically to the mirror.
    ToyTask live = task;
    PolicyState state;
    Policy policy;  // FullSync
    double cum = 0.0;
    for (std::size_t t = 0; t < trace.n_rows(); ++t) {
        const RunRecordRow row =
            run_iteration(live, policy, trace.row(t), t, cum, seed, state, config);
        cum = row.cum_time_s;
        for (std::size_t d = 0; d < live.theta.size(); ++d) {
            CHECK(live.theta[d] == doctest::Approx(mirror_thetas[t][d]).epsilon(1e-12));
        }
        CHECK(row.c == 4);
        const double slowest =
            *std::max_element(trace.row(t).begin(), trace.row(t).end());
        CHECK(row.iter_time_s == doctest::Approx(slowest + 0.02));
        CHECK(row.throughput == doctest::Approx(4.0 / row.iter_time_s));
    }

    // Layer 2: run_experiment reports the same trajectory through losses.
    const RunRecord record = run_experiment(task, policy, trace, 6, seed, config);
    REQUIRE(record.rows.size() == 6);
    CHECK(record.policy == "full_sync");
    ToyTask probe = task;
    double expected_cum = 0.0;
    for (std::size_t t = 0; t < 6; ++t) {
        probe.theta = mirror_thetas[t];
        CHECK(record.rows[t].train_loss ==
              doctest::Approx(train_loss(probe)).epsilon(1e-12));
        CHECK(record.rows[t].val_loss ==
              doctest::Approx(val_loss(probe)).epsilon(1e-12));
        expected_cum += record.rows[t].iter_time_s;
        CHECK(record.rows[t].cum_time_s == doctest::Approx(expected_cum).epsilon(1e-12));
    }
}

TEST_CASE("a static cutoff of n is indistinguishable from full_sync") {
    const ToyTask task = make_linreg_task(100, 2, 8, 0.2, 23);
    const RuntimeTrace trace = random_trace(8, 4, 24);
    Policy full;
    Policy static_n;
    static_n.kind = PolicyKind::StaticCutoff;
    static_n.static_c = 4;
    const RunRecord a = run_experiment(task, full, trace, 8, 5);
    const RunRecord b = run_experiment(task, static_n, trace, 8, 5);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t t = 0; t < a.rows.size(); ++t) {
        CHECK(a.rows[t].c == b.rows[t].c);
        CHECK(a.rows[t].iter_time_s == b.rows[t].iter_time_s);
        CHECK(a.rows[t].train_loss == b.rows[t].train_loss);
        CHECK(a.rows[t].val_loss == b.rows[t].val_loss);
    }
}

TEST_CASE("policy validation fails fast") {
    const ToyTask task = make_linreg_task(80, 2, 8, 0.2, 29);
    const RuntimeTrace trace = random_trace(3, 4, 30);
    Policy bad_static;
    bad_static.kind = PolicyKind::StaticCutoff;
    bad_static.static_c = 0;
    CHECK_THROWS_WITH_AS(run_experiment(task, bad_static, trace, 3, 1),
                         doctest::Contains("outside [1, 4]"), HarnessError);
    bad_static.static_c = 5;
    CHECK_THROWS_AS(run_experiment(task, bad_static, trace, 3, 1), HarnessError);

    Policy no_ckpt;
    no_ckpt.kind = PolicyKind::ModelCutoff;
    CHECK_THROWS_WITH_AS(run_experiment(task, no_ckpt, trace, 3, 1),
                         doctest::Contains("needs a checkpoint"), HarnessError);

    ToyTask ragged = task;
    ragged.minibatch = 6;  // not divisible by 4 workers
    CHECK_THROWS_WITH_AS(run_experiment(ragged, Policy{}, trace, 3, 1),
                         doctest::Contains("must divide across"), HarnessError);

    PolicyState state;
    ToyTask live = task;
    Policy async;
    async.kind = PolicyKind::AsyncStaleness;
    CHECK_THROWS_WITH_AS(
        run_iteration(live, async, trace.row(0), 0, 0.0, 1, state, HarnessConfig{}),
        doctest::Contains("event-driven"), HarnessError);
}

TEST_CASE("the oracle censors one loud straggler at cost of one runtime unit") {
    const ToyTask task = make_linreg_task(80, 2, 8, 0.2, 31);
    const RuntimeTrace trace(4, {{1.0, 1.0, 1.0, 100.0}});
    HarnessConfig config;
    config.overhead = 0.05;
    const RunRecord record = oracle_cutoff_run(task, trace, 1, 3, config);
    REQUIRE(record.rows.size() == 1);
    CHECK(record.policy == "oracle_cutoff");
    CHECK(record.rows[0].c == 3);
    CHECK(record.rows[0].iter_time_s == doctest::Approx(1.05));
    CHECK(record.rows[0].throughput == doctest::Approx(3.0 / 1.05));
}

TEST_CASE("oracle throughput dominates every other cutoff policy per iteration") {
    const ToyTask task = make_linreg_task(100, 2, 12, 0.2, 37);
    const RuntimeTrace trace = random_trace(30, 6, 38, /*spread=*/2.0);
    const RunRecord oracle = oracle_cutoff_run(task, trace, 30, 4);
    Policy full;
    Policy mid;
    mid.kind = PolicyKind::StaticCutoff;
    mid.static_c = 3;
    Policy order;
    order.kind = PolicyKind::GaussianOrder;
    for (const RunRecord& other :
         {run_experiment(task, full, trace, 30, 4),
          run_experiment(task, mid, trace, 30, 4),
          run_experiment(task, order, trace, 30, 4)}) {
        REQUIRE(other.rows.size() == oracle.rows.size());
        for (std::size_t t = 0; t < other.rows.size(); ++t) {
            CHECK(oracle.rows[t].throughput >= other.rows[t].throughput - 1e-12);
        }
    }
}

TEST_CASE("gaussian_order warms up at c = n, then matches a mirrored Elfving argmax") {
    const ToyTask task = make_linreg_task(80, 2, 8, 0.2, 41);
    const std::size_t n = 8;
    // Seven tight workers and one 3x straggler: the pooled fit should cut.
    Rng rng(42);
    std::vector<std::vector<double>> rows;
    for (std::size_t t = 0; t < 12; ++t) {
        std::vector<double> row(n);
        for (std::size_t w = 0; w + 1 < n; ++w) row[w] = 1.0 + 0.05 * rng.standard_normal();
        row[n - 1] = 3.0;
        rows.push_back(row);
    }
    const RuntimeTrace trace(n, rows);
    HarnessConfig config;
    config.order_window = 3;

    Policy policy;
    policy.kind = PolicyKind::GaussianOrder;
    const RunRecord record = run_experiment(task, policy, trace, 12, 7, config);
    REQUIRE(record.rows.size() == 12);
    CHECK(record.policy == "gaussian_order");
    for (std::size_t t = 0; t < 3; ++t) CHECK(record.rows[t].c == n);

    // Mirror iteration 3: pool the 24 fully observed runtimes of rows 0-2,
    // fit (mean, Bessel std), and argmax c / E[x_(c)] with >= tie-breaks.
    std::vector<double> pool;
    for (std::size_t t = 0; t < 3; ++t) {
        for (double v : trace.row(t)) pool.push_back(v);
    }
    const double mu = oracles::mean_of(pool);
    const double sigma = oracles::sample_std(pool);
    std::size_t best_c = 1;
    double best = -1.0;
    for (std::size_t c = 1; c <= n; ++c) {
        const double omega =
            static_cast<double>(c) / elfving_expectation(n, c, mu, sigma);
        if (omega >= best) {
            best = omega;
            best_c = c;
        }
    }
    CHECK(record.rows[3].c == best_c);
    CHECK(best_c < n);  // the straggler forces a real cutoff
    for (std::size_t t = 3; t < 12; ++t) {
        CHECK(record.rows[t].c >= 1);
        CHECK(record.rows[t].c <= n);
    }
}

TEST_CASE("model_cutoff cold-starts at c = n and maintains an imputed buffer") {
    const std::size_t n = 3;
    const RuntimeTrace history = random_trace(12, n, 43);
    TrainConfig tc;
    tc.epochs = 0;  // untrained checkpoint: exercises wiring, not accuracy
    tc.lag = 4;
    tc.seed = 3;
    tc.d_z = 2;
    tc.dmm_hidden = 4;
    tc.guide_hidden = 4;
    ModelCheckpoint ckpt = train(history, tc);

    Policy policy;
    policy.kind = PolicyKind::ModelCutoff;
    policy.ckpt = &ckpt;
    policy.predictive_samples = 10;

    const RuntimeTrace trace = random_trace(12, n, 44);
    ToyTask task = make_linreg_task(80, 2, 9, 0.2, 45);
    PolicyState state;
    double cum = 0.0;
    bool saw_partial = false;
    for (std::size_t t = 0; t < trace.n_rows(); ++t) {
        const RunRecordRow row =
            run_iteration(task, policy, trace.row(t), t, cum, 9, state, {});
        cum = row.cum_time_s;
        if (t < 4) {
            CHECK(row.c == n);  // buffer still filling
        } else {
            CHECK(row.c >= 1);
            CHECK(row.c <= n);
        }
        REQUIRE(state.buffer.has_value());
        const std::size_t last = state.buffer->size() - 1;
        const auto& buffered = state.buffer->row(last);
        const auto& flags = state.buffer->flags(last);
        if (row.c == n) {
            CHECK(buffered == trace.row(t));
            for (auto f : flags) CHECK(f == RuntimeFlag::Observed);
        } else {
            saw_partial = true;
            // The c fastest pass through observed; the rest are imputed
            // strictly beyond the cutoff time.
            std::vector<double> sorted = trace.row(t);
            std::sort(sorted.begin(), sorted.end());
            const double cutoff_time = sorted[row.c - 1];
            for (std::size_t w = 0; w < n; ++w) {
                if (flags[w] == RuntimeFlag::Observed) {
                    CHECK(buffered[w] == trace.row(t)[w]);
                    CHECK(buffered[w] <= cutoff_time);
                } else {
                    CHECK(buffered[w] > cutoff_time);
                }
            }
        }
    }
    CHECK(saw_partial);
    CHECK(state.buffer->full());

    Policy wrong = policy;
    const RuntimeTrace wide = random_trace(6, 5, 46);
    ToyTask wide_task = make_linreg_task(80, 2, 10, 0.2, 47);
    CHECK_THROWS_WITH_AS(run_experiment(wide_task, wrong, wide, 6, 1),
                         doctest::Contains("checkpoint expects"), HarnessError);

    const ToyTask fresh = make_linreg_task(80, 2, 9, 0.2, 45);
    const RunRecord r1 = run_experiment(fresh, policy, trace, 12, 9);
    const RunRecord r2 = run_experiment(fresh, policy, trace, 12, 9);
    REQUIRE(r1.rows.size() == r2.rows.size());
    for (std::size_t t = 0; t < r1.rows.size(); ++t) {
        CHECK(r1.rows[t].c == r2.rows[t].c);
        CHECK(r1.rows[t].train_loss == r2.rows[t].train_loss);
    }
}

TEST_CASE("async_staleness applies one update per completion in event order") {
    const ToyTask task = make_linreg_task(100, 2, 8, 0.4, 51);
    const RuntimeTrace trace = random_trace(5, 4, 52);
    Policy policy;
    policy.kind = PolicyKind::AsyncStaleness;
    const RunRecord record = run_experiment(task, policy, trace, 5, 6);
    CHECK(record.policy == "async_staleness");
    REQUIRE(record.rows.size() == 4 * 5);

    std::vector<double> event_times;
    std::vector<double> durations;
    for (const auto& row : record.rows) {
        CHECK(row.c == 1);
        event_times.push_back(row.cum_time_s);
        durations.push_back(row.iter_time_s);
    }
    CHECK(std::is_sorted(event_times.begin(), event_times.end()));

    // Every (round, worker) runtime appears exactly once as a duration.
    std::vector<double> expected;
    for (std::size_t t = 0; t < 5; ++t) {
        for (double v : trace.row(t)) expected.push_back(v);
    }
    std::sort(expected.begin(), expected.end());
    std::sort(durations.begin(), durations.end());
    CHECK(durations == expected);

    const double first =
        *std::min_element(trace.row(0).begin(), trace.row(0).end());
    CHECK(record.rows.front().cum_time_s == doctest::Approx(first));
    CHECK(record.rows.back().throughput ==
          doctest::Approx(static_cast<double>(record.rows.size()) /
                          record.rows.back().cum_time_s));

    const RunRecord again = run_experiment(task, policy, trace, 5, 6);
    CHECK(again.rows.size() == record.rows.size());
    CHECK(again.rows.back().train_loss == record.rows.back().train_loss);

    Policy hot = policy;
    hot.async_lr = 0.3;
    const RunRecord faster = run_experiment(task, hot, trace, 5, 6);
    CHECK(faster.rows.back().cum_time_s == record.rows.back().cum_time_s);
    CHECK(faster.rows.back().train_loss != record.rows.back().train_loss);
}

TEST_CASE("threaded gradient computation reproduces the sequential run") {
    const ToyTask task = make_logistic_task(120, 2, 8, 0.4, 57);
    const RuntimeTrace trace = random_trace(6, 4, 58);
    HarnessConfig seq;
    HarnessConfig par;
    par.threaded = true;
    const RunRecord a = run_experiment(task, Policy{}, trace, 6, 11, seq);
    const RunRecord b = run_experiment(task, Policy{}, trace, 6, 11, par);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t t = 0; t < a.rows.size(); ++t) {
        CHECK(a.rows[t].train_loss == b.rows[t].train_loss);
        CHECK(a.rows[t].val_loss == b.rows[t].val_loss);
        CHECK(a.rows[t].cum_time_s == b.rows[t].cum_time_s);
    }
}

TEST_CASE("a short trace terminates the run cleanly") {
    const ToyTask task = make_linreg_task(80, 2, 8, 0.2, 61);
    const RuntimeTrace trace = random_trace(4, 4, 62);
    const RunRecord record = run_experiment(task, Policy{}, trace, 100, 1);
    CHECK(record.rows.size() == 4);
}

TEST_CASE("run records round-trip through csv") {
    RunRecord record;
    record.policy = "static_cutoff";
    RunRecordRow row;
    row.iteration = 0;
    row.c = 3;
    row.iter_time_s = 1.0 / 3.0;
    row.cum_time_s = 0.1 + 0.2;
    row.train_loss = 1e-9;
    row.val_loss = 0.6931471805599453;
    row.throughput = 9.0;
    record.rows.push_back(row);
    row.iteration = 1;
    row.cum_time_s += 1.0 / 3.0;
    record.rows.push_back(row);

    const std::string path = oracles::temp_path("record.csv");
    save_run_record_csv(record, path);

    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header ==
          "iteration,policy,c,iter_time_s,cum_time_s,train_loss,val_loss,throughput");
    in.close();

    const RunRecord loaded = load_run_record_csv(path);
    CHECK(loaded.policy == record.policy);
    REQUIRE(loaded.rows.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(loaded.rows[i].iteration == record.rows[i].iteration);
        CHECK(loaded.rows[i].c == record.rows[i].c);
        CHECK(loaded.rows[i].iter_time_s == record.rows[i].iter_time_s);
        CHECK(loaded.rows[i].cum_time_s == record.rows[i].cum_time_s);
        CHECK(loaded.rows[i].train_loss == record.rows[i].train_loss);
        CHECK(loaded.rows[i].val_loss == record.rows[i].val_loss);
        CHECK(loaded.rows[i].throughput == record.rows[i].throughput);
    }
    std::remove(path.c_str());

    SUBCASE("missing file and malformed content are rejected") {
        CHECK_THROWS_WITH_AS(load_run_record_csv(oracles::temp_path("absent.csv")),
                             doctest::Contains("cannot open"), HarnessError);
        const std::string bad = oracles::temp_path("bad.csv");
        std::ofstream out(bad);
        out << "wrong,header\n";
        out.close();
        CHECK_THROWS_WITH_AS(load_run_record_csv(bad),
                             doctest::Contains("bad run record header"), HarnessError);
        std::ofstream out2(bad);
        out2 << "iteration,policy,c,iter_time_s,cum_time_s,train_loss,val_loss,"
                "throughput\n1,x,2\n";
        out2.close();
        CHECK_THROWS_WITH_AS(load_run_record_csv(bad),
                             doctest::Contains("expected 8 fields"), HarnessError);
        std::ofstream out3(bad);
        out3 << "iteration,policy,c,iter_time_s,cum_time_s,train_loss,val_loss,"
                "throughput\nzz,x,2,1,1,1,1,1\n";
        out3.close();
        CHECK_THROWS_WITH_AS(load_run_record_csv(bad),
                             doctest::Contains("cannot parse row"), HarnessError);
        std::remove(bad.c_str());
    }
}

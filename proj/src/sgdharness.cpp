#include "dcsgd/sgdharness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>
#include <thread>

namespace dcsgd {

namespace {

// Seed streams keeping example sampling identical across policies while
// decorrelating it from prediction and imputation noise.
constexpr std::uint64_t kSampleStream = 0x5a;
constexpr std::uint64_t kPredictStream = 0x9e;
constexpr std::uint64_t kImputeStream = 0x1b;

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double example_margin(const ToyTask& task, const std::vector<double>& x) {
    double z = task.theta[task.data.dim];  // bias
    for (std::size_t i = 0; i < task.data.dim; ++i) z += task.theta[i] * x[i];
    return z;
}

double example_loss(const ToyTask& task, const std::vector<double>& x, double y) {
    const double z = example_margin(task, x);
    if (task.kind == TaskKind::Logistic) {
        return std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::fabs(z)));
    }
    const double r = z - y;
    return 0.5 * r * r;
}

// Residual factor multiplying x (and the bias input 1).
double example_residual(const ToyTask& task, const std::vector<double>& x, double y) {
    const double z = example_margin(task, x);
    if (task.kind == TaskKind::Logistic) return stable_sigmoid(z) - y;
    return z - y;
}

void validate_task(const ToyTask& task, std::size_t n_workers) {
    if (task.data.dim == 0 || task.data.train_x.empty() || task.data.val_x.empty()) {
        throw HarnessError("task dataset is empty");
    }
    if (task.theta.size() != task.data.dim + 1) {
        throw HarnessError("task parameter vector must have dim+1 entries");
    }
    if (task.minibatch == 0 || task.minibatch % n_workers != 0) {
        throw HarnessError("minibatch " + std::to_string(task.minibatch) +
                           " must divide across " + std::to_string(n_workers) +
                           " workers");
    }
}

}  // namespace

std::string policy_name(const Policy& policy) {
    switch (policy.kind) {
        case PolicyKind::FullSync: return "full_sync";
        case PolicyKind::StaticCutoff: return "static_cutoff";
        case PolicyKind::GaussianOrder: return "gaussian_order";
        case PolicyKind::ModelCutoff: return "model_cutoff";
        case PolicyKind::AsyncStaleness: return "async_staleness";
        case PolicyKind::OracleCutoff: return "oracle_cutoff";
    }
    throw HarnessError("unknown policy kind");
}

namespace {

Dataset make_dataset(TaskKind kind, std::size_t n_points, std::size_t dim,
                     std::uint64_t seed) {
    if (n_points < 10 || dim == 0) throw HarnessError("dataset too small");
    Rng rng(seed);
    Dataset data;
    data.dim = dim;
    const std::size_t n_train = n_points - n_points / 5;
    // Fixed ground-truth direction for both tasks.
    std::vector<double> w_true(dim);
    for (double& w : w_true) w = rng.standard_normal();
    double norm = 0.0;
    for (double w : w_true) norm += w * w;
    norm = std::sqrt(norm);
    for (double& w : w_true) w /= norm;

    for (std::size_t i = 0; i < n_points; ++i) {
        std::vector<double> x(dim);
        double y = 0.0;
        if (kind == TaskKind::Logistic) {
            // Class-conditional Gaussians at +-1.2 along w_true.
            y = rng.uniform01() < 0.5 ? 0.0 : 1.0;
            const double shift = (y > 0.5 ? 1.2 : -1.2);
            for (std::size_t d = 0; d < dim; ++d) {
                x[d] = shift * w_true[d] + rng.standard_normal();
            }
        } else {
            for (std::size_t d = 0; d < dim; ++d) x[d] = rng.standard_normal();
            y = 0.3;  // intercept
            for (std::size_t d = 0; d < dim; ++d) y += w_true[d] * x[d];
            y += 0.1 * rng.standard_normal();
        }
        if (i < n_train) {
            data.train_x.push_back(std::move(x));
            data.train_y.push_back(y);
        } else {
            data.val_x.push_back(std::move(x));
            data.val_y.push_back(y);
        }
    }
    return data;
}

ToyTask make_task(TaskKind kind, std::size_t n_points, std::size_t dim,
                  std::size_t minibatch, double lr, std::uint64_t seed) {
    ToyTask task;
    task.kind = kind;
    task.data = make_dataset(kind, n_points, dim, seed);
    task.theta.assign(dim + 1, 0.0);
    task.minibatch = minibatch;
    task.lr = lr;
    return task;
}

}  // namespace

ToyTask make_logistic_task(std::size_t n_points, std::size_t dim,
                           std::size_t minibatch, double lr, std::uint64_t seed) {
    return make_task(TaskKind::Logistic, n_points, dim, minibatch, lr, seed);
}

ToyTask make_linreg_task(std::size_t n_points, std::size_t dim, std::size_t minibatch,
                         double lr, std::uint64_t seed) {
    return make_task(TaskKind::LinearRegression, n_points, dim, minibatch, lr, seed);
}

double dataset_loss(const ToyTask& task, const std::vector<std::vector<double>>& xs,
                    const std::vector<double>& ys) {
    double total = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        total += example_loss(task, xs[i], ys[i]);
    }
    return total / static_cast<double>(xs.size());
}

double train_loss(const ToyTask& task) {
    return dataset_loss(task, task.data.train_x, task.data.train_y);
}

double val_loss(const ToyTask& task) {
    return dataset_loss(task, task.data.val_x, task.data.val_y);
}

std::vector<double> worker_gradient(const ToyTask& task, Rng& rng, std::size_t count) {
    const std::size_t dim = task.data.dim;
    std::vector<double> grad(dim + 1, 0.0);
    const std::size_t n_train = task.data.train_x.size();
    for (std::size_t s = 0; s < count; ++s) {
        const std::size_t idx =
            static_cast<std::size_t>(rng.uniform01() * static_cast<double>(n_train)) %
            n_train;
        const std::vector<double>& x = task.data.train_x[idx];
        const double r = example_residual(task, x, task.data.train_y[idx]);
        for (std::size_t d = 0; d < dim; ++d) grad[d] += r * x[d];
        grad[dim] += r;
    }
    for (double& g : grad) g /= static_cast<double>(count);
    return grad;
}

namespace {

std::size_t choose_cutoff(const Policy& policy, const std::vector<double>& runtimes,
                          std::size_t iteration, std::uint64_t iter_seed,
                          PolicyState& state, const HarnessConfig& config,
                          std::optional<PredictiveDistribution>& pred_out) {
    const std::size_t n = runtimes.size();
    switch (policy.kind) {
        case PolicyKind::FullSync:
            return n;
        case PolicyKind::StaticCutoff:
            if (policy.static_c < 1 || policy.static_c > n) {
                throw HarnessError("static cutoff " + std::to_string(policy.static_c) +
                                   " outside [1, " + std::to_string(n) + "]");
            }
            return policy.static_c;
        case PolicyKind::GaussianOrder: {
            if (state.observed_window.size() < config.order_window) return n;
            double sum = 0.0;
            std::size_t count = 0;
            for (const auto& row : state.observed_window) {
                for (double v : row) sum += v;
                count += row.size();
            }
            const double mu = sum / static_cast<double>(count);
            double ss = 0.0;
            for (const auto& row : state.observed_window) {
                for (double v : row) ss += (v - mu) * (v - mu);
            }
            const double sigma =
                count > 1 ? std::sqrt(ss / static_cast<double>(count - 1)) : 0.0;
            std::size_t best_c = policy.c_min;
            double best = -1.0;
            for (std::size_t c = policy.c_min; c <= n; ++c) {
                const double omega =
                    static_cast<double>(c) / elfving_expectation(n, c, mu, sigma);
                if (omega >= best) {
                    best = omega;
                    best_c = c;
                }
            }
            return best_c;
        }
        case PolicyKind::ModelCutoff: {
            if (policy.ckpt == nullptr) {
                throw HarnessError("model_cutoff needs a checkpoint");
            }
            if (policy.ckpt->dmm.n_workers != n) {
                throw HarnessError("checkpoint expects " +
                                   std::to_string(policy.ckpt->dmm.n_workers) +
                                   " workers, trace has " + std::to_string(n));
            }
            if (!state.buffer) {
                state.buffer.emplace(n, policy.ckpt->guide.lag);
            }
            if (!state.buffer->full()) return n;  // cold start: fill the buffer
            pred_out = predict_next(*policy.ckpt, *state.buffer,
                                    policy.predictive_samples,
                                    mix_seed(iter_seed, kPredictStream));
            return cutoff_from_prediction(*pred_out, policy.c_min).c;
        }
        case PolicyKind::OracleCutoff: {
            std::vector<double> values = runtimes;
            return optimal_cutoff(sort_runtimes(std::move(values)), policy.c_min).c;
        }
        case PolicyKind::AsyncStaleness:
            throw HarnessError("async_staleness is event-driven, not iteration-based");
    }
    throw HarnessError("unknown policy kind");
    (void)iteration;
}

std::vector<std::vector<double>> all_worker_gradients(const ToyTask& task,
                                                      std::size_t n,
                                                      std::uint64_t iter_seed,
                                                      bool threaded) {
    const std::size_t per_worker = task.minibatch / n;
    std::vector<std::vector<double>> grads(n);
    auto compute = [&](std::size_t w) {
        Rng rng(mix_seed(mix_seed(iter_seed, kSampleStream), w));
        grads[w] = worker_gradient(task, rng, per_worker);
    };
    if (threaded) {
        std::vector<std::thread> threads;
        threads.reserve(n);
        for (std::size_t w = 0; w < n; ++w) threads.emplace_back(compute, w);
        for (auto& t : threads) t.join();
    } else {
        for (std::size_t w = 0; w < n; ++w) compute(w);
    }
    return grads;
}

}  // namespace

RunRecordRow run_iteration(ToyTask& task, const Policy& policy,
                           const std::vector<double>& runtimes, std::size_t iteration,
                           double cum_time_before, std::uint64_t run_seed,
                           PolicyState& state, const HarnessConfig& config) {
    const std::size_t n = runtimes.size();
    validate_task(task, n);
    const std::uint64_t iter_seed = mix_seed(run_seed, iteration);

    std::optional<PredictiveDistribution> pred;
    const std::size_t c =
        choose_cutoff(policy, runtimes, iteration, iter_seed, state, config, pred);

    // Gradients are sampled for every worker before the cutoff is applied, so
    // dropping a worker never changes what any other worker computed.
    const std::vector<std::vector<double>> grads =
        all_worker_gradients(task, n, iter_seed, config.threaded);

    std::vector<std::size_t> order(n);
    for (std::size_t w = 0; w < n; ++w) order[w] = w;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return runtimes[a] != runtimes[b] ? runtimes[a] < runtimes[b] : a < b;
    });
    const double cutoff_time = runtimes[order[c - 1]];

    std::vector<bool> completed(n, false);
    for (std::size_t rank = 0; rank < c; ++rank) completed[order[rank]] = true;

    std::vector<double> update(task.theta.size(), 0.0);
    for (std::size_t w = 0; w < n; ++w) {  // fixed reduction order
        if (!completed[w]) continue;
        for (std::size_t d = 0; d < update.size(); ++d) update[d] += grads[w][d];
    }
    const double step = task.lr / static_cast<double>(c);
    for (std::size_t d = 0; d < task.theta.size(); ++d) {
        task.theta[d] -= step * update[d];
    }

    if (policy.kind == PolicyKind::GaussianOrder) {
        std::vector<double> observed;
        observed.reserve(c);
        for (std::size_t w = 0; w < n; ++w) {
            if (completed[w]) observed.push_back(runtimes[w]);
        }
        state.observed_window.push_back(std::move(observed));
        if (state.observed_window.size() > config.order_window) {
            state.observed_window.pop_front();
        }
    }
    if (policy.kind == PolicyKind::ModelCutoff) {
        if (c == n || !pred) {
            advance_buffer(*state.buffer, runtimes,
                           std::vector<RuntimeFlag>(n, RuntimeFlag::Observed));
        } else {
            std::vector<std::optional<double>> observed(n);
            for (std::size_t w = 0; w < n; ++w) {
                if (completed[w]) observed[w] = runtimes[w];
            }
            const ImputedRow imputed = impute_censored(
                *pred, observed, cutoff_time, mix_seed(iter_seed, kImputeStream));
            advance_buffer(*state.buffer, imputed.values, imputed.flags);
        }
    }

    RunRecordRow row;
    row.iteration = iteration;
    row.c = c;
    row.iter_time_s = cutoff_time + config.overhead;
    row.cum_time_s = cum_time_before + row.iter_time_s;
    row.train_loss = train_loss(task);
    row.val_loss = val_loss(task);
    row.throughput = static_cast<double>(c) / row.iter_time_s;
    return row;
}

namespace {

RunRecord async_run(ToyTask task, const Policy& policy, const RuntimeTrace& trace,
                    std::size_t iterations, std::uint64_t seed,
                    const HarnessConfig& config) {
    const std::size_t n = trace.n_workers();
    validate_task(task, n);
    const std::size_t rounds = std::min(iterations, trace.n_rows());
    const double lr = policy.async_lr.value_or(task.lr / static_cast<double>(n));
    const std::size_t per_worker = task.minibatch / n;

    struct Event {
        double finish = 0.0;
        std::size_t worker = 0;
        std::size_t round = 0;
        std::vector<double> gradient;  // computed against theta at start time
        bool operator>(const Event& other) const {
            return finish != other.finish ? finish > other.finish
                                          : worker > other.worker;
        }
    };
    std::priority_queue<Event, std::vector<Event>, std::greater<Event>> queue;
    auto start_round = [&](std::size_t w, std::size_t round, double start_time) {
        Event e;
        e.worker = w;
        e.round = round;
        e.finish = start_time + trace.row(round)[w];
        Rng rng(mix_seed(mix_seed(seed, kSampleStream), mix_seed(w, round)));
        e.gradient = worker_gradient(task, rng, per_worker);
        queue.push(std::move(e));
    };
    for (std::size_t w = 0; w < n; ++w) start_round(w, 0, 0.0);

    RunRecord record;
    record.policy = policy_name(policy);
    std::size_t applied = 0;
    while (!queue.empty()) {
        Event e = queue.top();
        queue.pop();
        for (std::size_t d = 0; d < task.theta.size(); ++d) {
            task.theta[d] -= lr * e.gradient[d];
        }
        ++applied;
        RunRecordRow row;
        row.iteration = applied - 1;
        row.c = 1;
        row.iter_time_s = trace.row(e.round)[e.worker];
        row.cum_time_s = e.finish;
        row.train_loss = train_loss(task);
        row.val_loss = val_loss(task);
        row.throughput = static_cast<double>(applied) / e.finish;
        record.rows.push_back(row);
        if (e.round + 1 < rounds) start_round(e.worker, e.round + 1, e.finish);
    }
    return record;
}

}  // namespace

RunRecord run_experiment(const ToyTask& task, const Policy& policy,
                         const RuntimeTrace& trace, std::size_t iterations,
                         std::uint64_t seed, const HarnessConfig& config) {
    if (policy.kind == PolicyKind::AsyncStaleness) {
        return async_run(task, policy, trace, iterations, seed, config);
    }
    ToyTask live = task;
    validate_task(live, trace.n_workers());
    RunRecord record;
    record.policy = policy_name(policy);
    PolicyState state;
    TraceReplay replay(trace);
    double cum_time = 0.0;
    for (std::size_t t = 0; t < iterations; ++t) {
        const auto row = replay.next();
        if (!row) break;  // runtime source exhausted: clean termination
        RunRecordRow rec =
            run_iteration(live, policy, *row, t, cum_time, seed, state, config);
        cum_time = rec.cum_time_s;
        record.rows.push_back(std::move(rec));
    }
    return record;
}

RunRecord oracle_cutoff_run(const ToyTask& task, const RuntimeTrace& trace,
                            std::size_t iterations, std::uint64_t seed,
                            const HarnessConfig& config) {
    Policy policy;
    policy.kind = PolicyKind::OracleCutoff;
    return run_experiment(task, policy, trace, iterations, seed, config);
}

void save_run_record_csv(const RunRecord& record, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw HarnessError("cannot open " + path + " for writing");
    out << "iteration,policy,c,iter_time_s,cum_time_s,train_loss,val_loss,"
           "throughput\n";
    for (const RunRecordRow& row : record.rows) {
        out << row.iteration << ',' << record.policy << ',' << row.c << ','
            << render_runtime(row.iter_time_s) << ',' << render_runtime(row.cum_time_s)
            << ',' << render_runtime(row.train_loss) << ','
            << render_runtime(row.val_loss) << ',' << render_runtime(row.throughput)
            << '\n';
    }
    if (!out) throw HarnessError("write failed for " + path);
}

RunRecord load_run_record_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw HarnessError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) ||
        line != "iteration,policy,c,iter_time_s,cum_time_s,train_loss,val_loss,"
                "throughput") {
        throw HarnessError("bad run record header in " + path);
    }
    RunRecord record;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 8) {
            throw HarnessError(path + ":" + std::to_string(line_no) +
                               ": expected 8 fields");
        }
        try {
            RunRecordRow row;
            row.iteration = std::stoull(fields[0]);
            if (record.rows.empty()) record.policy = fields[1];
            row.c = std::stoull(fields[2]);
            row.iter_time_s = std::stod(fields[3]);
            row.cum_time_s = std::stod(fields[4]);
            row.train_loss = std::stod(fields[5]);
            row.val_loss = std::stod(fields[6]);
            row.throughput = std::stod(fields[7]);
            record.rows.push_back(row);
        } catch (const std::exception&) {
            throw HarnessError(path + ":" + std::to_string(line_no) +
                               ": cannot parse row");
        }
    }
    return record;
}

}  // namespace dcsgd

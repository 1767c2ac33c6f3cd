// Command-line front end for the dynamic-cutoff SGD toolkit: synthetic trace
// generation, runtime-model training, one-step prediction evaluation, policy
// races, and plot-data export.
//
// Exit codes: 0 success, 2 usage error, 1 runtime error. Diagnostics go to
// stderr; data goes to files or stdout.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dcsgd/clustersim.hpp"
#include "dcsgd/predictor.hpp"
#include "dcsgd/sgdharness.hpp"
#include "dcsgd/trainer.hpp"

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TraceGenArgs {
    std::string preset;
    std::string spec_path;
    std::string out;
    std::optional<std::uint64_t> seed;
};

struct TrainArgs {
    std::string trace;
    std::string out;
    dcsgd::TrainConfig config;
};

struct EvalPredArgs {
    std::string ckpt;
    std::string trace;
    double split = 0.8;
    std::size_t k = dcsgd::kDefaultPredictiveSamples;
    std::uint64_t seed = 0;
    std::string out_csv;
};

struct RaceArgs {
    std::string trace;
    std::string spec_path;
    std::string preset;
    std::string ckpt;
    std::string policies = "full_sync,model_cutoff";
    std::size_t iters = 0;
    std::uint64_t seed = 0;
    std::string out_prefix = "race";
    std::string task = "logistic";
    std::size_t points = 10000;
    std::size_t dim = 10;
    std::size_t minibatch = 0;  // 0: 100 per worker
    double lr = 0.5;
    double overhead = 0.0;
    std::size_t k = dcsgd::kDefaultPredictiveSamples;
    std::size_t c_min = 1;
    std::size_t order_window = 20;
    bool threaded = false;
};

struct ExportArgs {
    std::vector<std::string> records;
    std::string what;
    std::string out;
};

dcsgd::SimSpec spec_from_args(const std::string& preset, const std::string& spec_path,
                              std::optional<std::uint64_t> seed_override) {
    if (preset.empty() == spec_path.empty()) {
        throw UsageError("exactly one of --preset and --spec is required");
    }
    dcsgd::SimSpec spec;
    if (!preset.empty()) {
        try {
            spec = dcsgd::preset_sim_spec(preset);
        } catch (const dcsgd::SimError& e) {
            throw UsageError(e.what());
        }
    } else {
        try {
            spec = dcsgd::load_sim_spec(spec_path);
        } catch (const dcsgd::SimError& e) {
            throw UsageError(std::string("invalid simulation spec: ") + e.what());
        }
    }
    if (seed_override) spec.seed = *seed_override;
    return spec;
}

int run_trace_gen(const TraceGenArgs& args) {
    const dcsgd::SimSpec spec = spec_from_args(args.preset, args.spec_path, args.seed);
    dcsgd::save_trace(dcsgd::simulate_trace(spec), args.out);
    std::cerr << "wrote " << spec.iterations << " iterations x " << spec.n_workers
              << " workers to " << args.out << "\n";
    return 0;
}

int run_train(const TrainArgs& args) {
    const dcsgd::RuntimeTrace trace = dcsgd::load_trace(args.trace);
    const dcsgd::ModelCheckpoint ckpt = dcsgd::train(trace, args.config);
    dcsgd::save_checkpoint(ckpt, args.out);
    if (ckpt.trained) {
        std::cerr << "trained " << ckpt.trained_epochs << " epochs, final ELBO "
                  << ckpt.final_elbo << "; checkpoint " << args.out << "\n";
    } else {
        std::cerr << "wrote untrained (initialized) checkpoint " << args.out << "\n";
    }
    return 0;
}

int run_eval_pred(const EvalPredArgs& args) {
    dcsgd::ModelCheckpoint ckpt = dcsgd::load_checkpoint(args.ckpt);
    const dcsgd::RuntimeTrace trace = dcsgd::load_trace(args.trace);
    if (!(args.split > 0.0 && args.split < 1.0)) {
        throw UsageError("--split must lie strictly between 0 and 1");
    }
    std::size_t start = static_cast<std::size_t>(
        args.split * static_cast<double>(trace.n_rows()));
    start = std::max(start, ckpt.guide.lag);
    const dcsgd::PredictionEval eval =
        dcsgd::evaluate_predictions(ckpt, trace, start, args.k, args.seed);

    if (!args.out_csv.empty()) {
        std::ofstream out(args.out_csv, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open " + args.out_csv);
        out << "iteration,rank,predicted_mean,predicted_lo,predicted_hi,observed\n";
        for (const auto& row : eval.rows) {
            for (std::size_t r = 0; r < row.predicted_mean.size(); ++r) {
                out << row.iteration << ',' << (r + 1) << ','
                    << dcsgd::render_runtime(row.predicted_mean[r]) << ','
                    << dcsgd::render_runtime(row.predicted_mean[r] -
                                             2.0 * row.predicted_std[r])
                    << ','
                    << dcsgd::render_runtime(row.predicted_mean[r] +
                                             2.0 * row.predicted_std[r])
                    << ',' << dcsgd::render_runtime(row.observed_sorted[r]) << '\n';
            }
        }
    }
    std::cout << "steps: " << eval.steps << "\n"
              << "model sorted-runtime RMSE: " << eval.model_rmse << "\n"
              << "carry-forward RMSE: " << eval.carry_rmse << "\n"
              << "ratio (model/carry): " << eval.model_rmse / eval.carry_rmse << "\n";
    return 0;
}

struct ParsedPolicy {
    dcsgd::Policy policy;
    std::string label;
};

std::vector<ParsedPolicy> parse_policies(const std::string& list, std::size_t n_workers,
                                         dcsgd::ModelCheckpoint* ckpt,
                                         const RaceArgs& args) {
    std::vector<ParsedPolicy> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        dcsgd::Policy policy;
        policy.c_min = args.c_min;
        policy.predictive_samples = args.k;
        std::string name = item;
        const auto colon = item.find(':');
        std::string arg;
        if (colon != std::string::npos) {
            name = item.substr(0, colon);
            arg = item.substr(colon + 1);
        }
        if (name == "full_sync") {
            policy.kind = dcsgd::PolicyKind::FullSync;
        } else if (name == "static_cutoff") {
            policy.kind = dcsgd::PolicyKind::StaticCutoff;
            policy.static_c = arg.empty() ? n_workers : std::stoull(arg);
        } else if (name == "gaussian_order") {
            policy.kind = dcsgd::PolicyKind::GaussianOrder;
        } else if (name == "model_cutoff") {
            policy.kind = dcsgd::PolicyKind::ModelCutoff;
            if (ckpt == nullptr) {
                throw UsageError("--ckpt is required when racing model_cutoff");
            }
            policy.ckpt = ckpt;
        } else if (name == "async_staleness") {
            policy.kind = dcsgd::PolicyKind::AsyncStaleness;
            if (!arg.empty()) policy.async_lr = std::stod(arg);
        } else if (name == "oracle" || name == "oracle_cutoff") {
            policy.kind = dcsgd::PolicyKind::OracleCutoff;
        } else {
            throw UsageError("unknown policy '" + name +
                             "'; known: full_sync, static_cutoff[:c], gaussian_order, "
                             "model_cutoff, async_staleness[:lr], oracle");
        }
        out.push_back({policy, dcsgd::policy_name(policy)});
    }
    if (out.empty()) throw UsageError("--policies must name at least one policy");
    return out;
}

int run_race(const RaceArgs& args) {
    const int sources = int(!args.trace.empty()) + int(!args.spec_path.empty()) +
                        int(!args.preset.empty());
    if (sources != 1) {
        throw UsageError("exactly one of --trace, --spec, --preset is required");
    }
    dcsgd::RuntimeTrace trace =
        !args.trace.empty()
            ? dcsgd::load_trace(args.trace)
            : dcsgd::simulate_trace(spec_from_args(args.preset, args.spec_path,
                                                   args.seed));

    std::optional<dcsgd::ModelCheckpoint> ckpt;
    if (!args.ckpt.empty()) ckpt = dcsgd::load_checkpoint(args.ckpt);

    const std::size_t n = trace.n_workers();
    std::vector<ParsedPolicy> policies =
        parse_policies(args.policies, n, ckpt ? &*ckpt : nullptr, args);

    dcsgd::ToyTask task;
    const std::size_t minibatch = args.minibatch == 0 ? 100 * n : args.minibatch;
    if (args.task == "logistic") {
        task = dcsgd::make_logistic_task(args.points, args.dim, minibatch, args.lr,
                                         args.seed);
    } else if (args.task == "linreg") {
        task = dcsgd::make_linreg_task(args.points, args.dim, minibatch, args.lr,
                                       args.seed);
    } else {
        throw UsageError("unknown task '" + args.task + "'; known: logistic, linreg");
    }

    dcsgd::HarnessConfig config;
    config.overhead = args.overhead;
    config.order_window = args.order_window;
    config.threaded = args.threaded;
    const std::size_t iters = args.iters == 0 ? trace.n_rows() : args.iters;

    for (const ParsedPolicy& p : policies) {
        const dcsgd::RunRecord record =
            dcsgd::run_experiment(task, p.policy, trace, iters, args.seed, config);
        const std::string path = args.out_prefix + "_" + p.label + ".csv";
        dcsgd::save_run_record_csv(record, path);
        std::cerr << p.label << ": " << record.rows.size() << " rows -> " << path
                  << "\n";
    }
    return 0;
}

int run_export(const ExportArgs& args) {
    if (args.records.empty()) throw UsageError("--records is required");
    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!args.out.empty()) {
        file.open(args.out, std::ios::binary);
        if (!file) throw std::runtime_error("cannot open " + args.out);
        out = &file;
    }
    *out << "series,x,y\n";
    for (const std::string& path : args.records) {
        if (args.what == "idle") {
            // Idle is measured on a raw runtime trace: per iteration, the
            // median worker's wait under full synchronization (max - median).
            const dcsgd::RuntimeTrace trace = dcsgd::load_trace(path);
            const std::string series =
                std::filesystem::path(path).stem().string();
            for (std::size_t t = 0; t < trace.n_rows(); ++t) {
                std::vector<double> row = trace.row(t);
                std::sort(row.begin(), row.end());
                const double idle =
                    row.back() - row[row.size() / 2 == 0 ? 0 : row.size() / 2 - 1];
                *out << series << ',' << t << ',' << dcsgd::render_runtime(idle)
                     << '\n';
            }
            continue;
        }
        const dcsgd::RunRecord record = dcsgd::load_run_record_csv(path);
        for (const auto& row : record.rows) {
            if (args.what == "throughput") {
                *out << record.policy << ',' << row.iteration << ','
                     << dcsgd::render_runtime(row.throughput) << '\n';
            } else if (args.what == "convergence") {
                *out << record.policy << ',' << dcsgd::render_runtime(row.cum_time_s)
                     << ',' << dcsgd::render_runtime(row.val_loss) << '\n';
            } else {
                throw UsageError("unknown --what '" + args.what +
                                 "'; known: throughput, convergence, idle");
            }
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynamic-cutoff synchronous SGD toolkit"};
    app.require_subcommand(1);

    TraceGenArgs tg;
    CLI::App* trace_gen =
        app.add_subcommand("trace-gen", "generate a synthetic worker runtime trace");
    trace_gen->add_option("--preset", tg.preset, "named scenario preset");
    trace_gen->add_option("--spec", tg.spec_path, "simulation spec file");
    trace_gen->add_option("--out", tg.out, "output trace path")->required();
    trace_gen->add_option("--seed", tg.seed, "override the spec seed");

    TrainArgs tr;
    CLI::App* train_cmd =
        app.add_subcommand("train", "fit the runtime model to a trace");
    train_cmd->add_option("--trace", tr.trace, "training trace path")->required();
    train_cmd->add_option("--out", tr.out, "output checkpoint path")->required();
    train_cmd->add_option("--epochs", tr.config.epochs, "training epochs");
    train_cmd->add_option("--seed", tr.config.seed, "training seed");
    train_cmd->add_option("--lag", tr.config.lag, "window length");
    train_cmd->add_option("--minibatch", tr.config.minibatch, "windows per step");
    train_cmd->add_option("--lr", tr.config.adam.lr, "Adam learning rate");
    train_cmd->add_option("--elbo-samples", tr.config.elbo_samples,
                          "ELBO samples per window");
    train_cmd->add_option("--d-z", tr.config.d_z, "latent dimension");
    train_cmd->add_option("--dmm-hidden", tr.config.dmm_hidden,
                          "model hidden width");
    train_cmd->add_option("--guide-hidden", tr.config.guide_hidden,
                          "guide hidden width");

    EvalPredArgs ev;
    CLI::App* eval_cmd = app.add_subcommand(
        "eval-pred", "one-step-ahead prediction report vs carry-forward");
    eval_cmd->add_option("--ckpt", ev.ckpt, "model checkpoint")->required();
    eval_cmd->add_option("--trace", ev.trace, "evaluation trace")->required();
    eval_cmd->add_option("--split", ev.split, "fraction of rows before evaluation");
    eval_cmd->add_option("--k", ev.k, "predictive samples per step");
    eval_cmd->add_option("--seed", ev.seed, "evaluation seed");
    eval_cmd->add_option("--out", ev.out_csv, "per-rank CSV output path");

    RaceArgs rc;
    CLI::App* race_cmd =
        app.add_subcommand("race", "run cutoff policies on a toy SGD task");
    race_cmd->add_option("--trace", rc.trace, "recorded trace path");
    race_cmd->add_option("--spec", rc.spec_path, "simulation spec file");
    race_cmd->add_option("--preset", rc.preset, "named scenario preset");
    race_cmd->add_option("--ckpt", rc.ckpt, "checkpoint for model_cutoff");
    race_cmd->add_option("--policies", rc.policies,
                         "comma list: full_sync, static_cutoff[:c], gaussian_order, "
                         "model_cutoff, async_staleness[:lr], oracle");
    race_cmd->add_option("--iters", rc.iters, "iterations (default: whole trace)");
    race_cmd->add_option("--seed", rc.seed, "run seed");
    race_cmd->add_option("--out", rc.out_prefix, "output CSV prefix");
    race_cmd->add_option("--task", rc.task, "toy task: logistic or linreg");
    race_cmd->add_option("--points", rc.points, "dataset size");
    race_cmd->add_option("--dim", rc.dim, "feature dimension");
    race_cmd->add_option("--minibatch", rc.minibatch,
                         "examples per iteration (default 100 per worker)");
    race_cmd->add_option("--lr", rc.lr, "task learning rate");
    race_cmd->add_option("--overhead", rc.overhead, "aggregation seconds/iteration");
    race_cmd->add_option("--k", rc.k, "predictive samples per iteration");
    race_cmd->add_option("--c-min", rc.c_min, "cutoff floor");
    race_cmd->add_option("--order-window", rc.order_window,
                         "gaussian_order pooling window");
    race_cmd->add_flag("--threaded", rc.threaded, "real worker threads");

    ExportArgs ex;
    CLI::App* export_cmd =
        app.add_subcommand("export", "tidy (series,x,y) CSV for plotting");
    export_cmd->add_option("--records", ex.records,
                           "run-record CSVs (traces for --what idle)");
    export_cmd
        ->add_option("--what", ex.what, "throughput | convergence | idle")
        ->required();
    export_cmd->add_option("--out", ex.out, "output path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (trace_gen->parsed()) return run_trace_gen(tg);
        if (train_cmd->parsed()) return run_train(tr);
        if (eval_cmd->parsed()) return run_eval_pred(ev);
        if (race_cmd->parsed()) return run_race(rc);
        if (export_cmd->parsed()) return run_export(ex);
        throw UsageError("no subcommand given");
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

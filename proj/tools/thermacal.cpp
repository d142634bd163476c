// thermacal: spatio-thermal depth correction for RGB-D cameras.
//
//   thermacal generate --config cfg.json [--seed N]
//   thermacal train    --config cfg.json [--target-mode gt_minus_obs|rgb_delta] [--in-sample]
//   thermacal correct  --config cfg.json --position 0.6 --temp 12 [--chunk N]
//   thermacal evaluate --config cfg.json [--in-sample]
//   thermacal bench    --mode kernel|pipeline [--config cfg.json] [--json out.json]
//
// Exit codes: 0 success, 2 contract/config error, 3 numerical failure.

#include "thermacal/bench.hpp"
#include "thermacal/error.hpp"
#include "thermacal/pipeline.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

namespace {

using thermacal::ExitCode;
namespace pl = thermacal::pipeline;

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<long long> chunk;
    std::optional<std::string> target_mode;
    std::optional<int> threads;
    bool in_sample = false;
};

pl::PipelineConfig resolve_config(const CommonArgs& args) {
    pl::PipelineConfig cfg = args.config_path.empty() ? pl::PipelineConfig{} : pl::PipelineConfig::load(args.config_path);
    if (args.seed) {
        cfg.rig.rng_seed = *args.seed;
    }
    if (args.chunk) {
        if (*args.chunk < 1) {
            throw thermacal::ContractError("--chunk must be at least 1");
        }
        cfg.chunk = *args.chunk;
    }
    if (args.target_mode) {
        cfg.target_mode = pl::target_mode_from_string(*args.target_mode);
    }
    if (args.threads) {
        cfg.threads = *args.threads;
        cfg.rig.threads = *args.threads;
    }
    if (args.in_sample) {
        cfg.in_sample = true;
    }
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "Pipeline configuration (JSON)");
    cmd->add_option("--seed", args.seed, "Override the rig RNG seed");
    cmd->add_option("--chunk", args.chunk, "Pixels per prediction chunk");
    cmd->add_option("--target-mode", args.target_mode, "gt_minus_obs (default) or rgb_delta");
    cmd->add_option("--threads", args.threads, "Worker threads (capped by THERMACAL_THREADS)");
    cmd->add_flag("--in-sample", args.in_sample, "Train on all temperatures, evaluate in-sample");
}

void write_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw thermacal::IoError("cannot write " + path);
    }
    out << j.dump(2) << '\n';
}

int run_bench(const CommonArgs& args, const std::string& mode, const std::string& json_path, long long n,
              long long m, int trials, const std::vector<long long>& chunks, std::optional<double> position,
              std::optional<double> temp) {
    namespace bench = thermacal::bench;
    nlohmann::json out;
    if (mode == "kernel") {
        thermacal::gp::Hyperparams hyper;
        hyper.w << 2.0, 0.04, 1.29, 0.002;
        hyper.sigma_s = 0.031;
        hyper.sigma_y = 0.044;
        bench::KernelBenchOptions options;
        options.trials = trials;
        const auto [naive, fast] = bench::bench_kernel(n, m, hyper, options);
        std::cout << naive.variant << ": " << naive.seconds_per_frame << " s/frame (" << naive.fps << " fps)\n"
                  << fast.variant << ": " << fast.seconds_per_frame << " s/frame (" << fast.fps << " fps)\n"
                  << "speedup: " << naive.seconds_per_frame / fast.seconds_per_frame << "x\n";
        out = {{"mode", "kernel"},
               {"reports", {naive.to_json(), fast.to_json()}},
               {"speedup", naive.seconds_per_frame / fast.seconds_per_frame}};
    } else if (mode == "pipeline") {
        const pl::PipelineConfig cfg = resolve_config(args);
        const auto manifest = thermacal::sim::load_manifest(cfg.dataset_dir);
        const thermacal::sim::ManifestEntry* entry = &manifest.entries.front();
        if (position && temp) {
            entry = manifest.find(*position, *temp);
            if (entry == nullptr) {
                throw thermacal::LookupError("no capture at the requested position/temperature");
            }
        }
        const auto depth = thermacal::read_pfm(cfg.dataset_dir / entry->obs);
        const auto model = thermacal::gp::load_model(cfg.model_path);
        bench::PipelineBenchOptions options;
        options.trials = trials;
        options.chunk_sizes.assign(chunks.begin(), chunks.end());
        const auto reports = bench::bench_pipeline(depth, entry->temperature, model, manifest.camera, options);
        out = {{"mode", "pipeline"}, {"reports", nlohmann::json::array()}};
        for (const auto& r : reports) {
            std::cout << r.variant << ": " << r.seconds_per_frame << " s/frame (" << r.fps << " fps)  " << r.note
                      << '\n';
            out["reports"].push_back(r.to_json());
        }
    } else {
        throw thermacal::ContractError("--mode must be kernel or pipeline");
    }
    if (!json_path.empty()) {
        write_json(out, json_path);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spatio-thermal depth correction for RGB-D cameras"};
    app.require_subcommand(1);

    CommonArgs args;
    auto* generate = app.add_subcommand("generate", "Synthesize a capture dataset");
    auto* train = app.add_subcommand("train", "Fit the correction model");
    auto* correct = app.add_subcommand("correct", "Correct one capture");
    auto* evaluate = app.add_subcommand("evaluate", "Report Cartesian RMSE before/after correction");
    auto* bench = app.add_subcommand("bench", "Kernel and pipeline benchmarks");
    for (auto* cmd : {generate, train, correct, evaluate, bench}) {
        add_common(cmd, args);
    }

    std::optional<double> position;
    std::optional<double> temp;
    for (auto* cmd : {correct, bench}) {
        cmd->add_option("--position", position, "Axis position in meters");
        cmd->add_option("--temp", temp, "Temperature in degrees Celsius");
    }

    std::string bench_mode = "kernel";
    std::string bench_json;
    long long bench_n = 5000;
    long long bench_m = 640 * 480;
    int bench_trials = 5;
    std::vector<long long> bench_chunks{16384};
    bench->add_option("--mode", bench_mode, "kernel or pipeline");
    bench->add_option("--json", bench_json, "Write the report as JSON");
    bench->add_option("--n", bench_n, "Training points (kernel mode)");
    bench->add_option("--m", bench_m, "Query points per frame (kernel mode)");
    bench->add_option("--trials", bench_trials, "Timed trials (median reported)");
    bench->add_option("--chunks", bench_chunks, "Chunk sizes (pipeline mode)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) {
            const auto manifest = pl::cmd_generate(resolve_config(args));
            std::cout << "wrote " << manifest.entries.size() << " capture pairs\n";
        } else if (train->parsed()) {
            const auto cfg = resolve_config(args);
            const auto summary = pl::cmd_train(cfg);
            std::cout << "N = " << summary.n << " (hyperparameters tuned on " << summary.n_optimized << ")\n"
                      << "NLML " << summary.initial_nlml << " -> " << summary.final_nlml << " after "
                      << summary.iterations << " iterations\n"
                      << "w = [" << summary.hyper.w.transpose() << "], sigma_s = " << summary.hyper.sigma_s
                      << ", sigma_y = " << summary.hyper.sigma_y << '\n'
                      << "model written to " << cfg.model_path.string() << '\n';
            if (summary.warning) {
                std::cerr << "warning: hyperparameter search stopped on repeated factorisation failures; "
                             "kept the best parameters found\n";
                return static_cast<int>(ExitCode::kNumerical);
            }
        } else if (correct->parsed()) {
            if (!position || !temp) {
                throw thermacal::ContractError("correct needs --position and --temp");
            }
            const auto out = pl::cmd_correct(resolve_config(args), *position, *temp);
            std::cout << "wrote " << out.corrected.string() << " and " << out.confidence.string() << '\n';
        } else if (evaluate->parsed()) {
            const auto cfg = resolve_config(args);
            const auto report = pl::cmd_evaluate(cfg);
            std::cout << report.to_text() << "report written to " << cfg.report_path.string() << '\n';
        } else if (bench->parsed()) {
            return run_bench(args, bench_mode, bench_json, bench_n, bench_m, bench_trials, bench_chunks, position,
                             temp);
        }
    } catch (const thermacal::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(e.exit_code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::kContract);
    }
    return 0;
}

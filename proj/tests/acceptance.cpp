// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
//
//   acceptance --work-dir <scratch> --config-dir <repo>/configs [--only 1,8]

#include "oracles.hpp"

#include "thermacal/bench.hpp"
#include "thermacal/error.hpp"
#include "thermacal/geometry.hpp"
#include "thermacal/pipeline.hpp"

#include <CLI11.hpp>

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace thermacal;
namespace pl = thermacal::pipeline;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 3) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

double elapsed(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

/// Appends a runtime check to an outcome.
Outcome within(Outcome o, double seconds, double limit) {
    o.detail += "; " + fmt(seconds) + " s (limit " + fmt(limit) + " s)";
    o.pass = o.pass && seconds < limit;
    return o;
}

std::vector<unsigned char> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + p.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

pl::PipelineConfig relocate(const fs::path& config_file, const fs::path& root) {
    pl::PipelineConfig c = pl::PipelineConfig::load(config_file);
    fs::remove_all(root);
    c.dataset_dir = root / "dataset";
    c.model_path = root / "model.tgp";
    c.report_path = root / "report.json";
    c.output_dir = root / "corrected";
    return c;
}

gp::FeatureMatrix random_rows(int n, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    gp::FeatureMatrix X(n, 4);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < 4; ++k) {
            X(i, k) = u(rng);
        }
    }
    return X;
}

// ---------------------------------------------------------------------------

Outcome order_of_magnitude(const fs::path& config_dir, const fs::path& work) {
    const auto t0 = Clock::now();
    pl::PipelineConfig c = relocate(config_dir / "desk.json", work / "c1");
    pl::cmd_generate(c);
    pl::cmd_train(c);
    const pl::EvalReport held_out = pl::cmd_evaluate(c);

    c.in_sample = true;
    c.model_path = work / "c1" / "model_in_sample.tgp";
    c.report_path = work / "c1" / "report_in_sample.json";
    pl::cmd_train(c);
    const pl::EvalReport in_sample = pl::cmd_evaluate(c);

    const double r1 = held_out.before.z / held_out.after.z;
    const double r2 = in_sample.before.z / in_sample.after.z;
    Outcome o;
    o.pass = held_out.after.z <= held_out.before.z / 5.0 && in_sample.after.z <= in_sample.before.z / 8.0;
    o.detail = "z-RMSE held-out " + fmt(held_out.before.z) + " -> " + fmt(held_out.after.z) + " mm (" + fmt(r1) +
               "x, need 5x); in-sample " + fmt(in_sample.before.z) + " -> " + fmt(in_sample.after.z) + " mm (" +
               fmt(r2) + "x, need 8x)";
    return within(o, elapsed(t0), 120.0);
}

Outcome kernel_equivalence() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1001);
    std::uniform_int_distribution<int> size(1, 200);
    std::uniform_real_distribution<double> shift(-10.0, 10.0);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const gp::Hyperparams h = oracle::random_hyper(rng);
        const double s = shift(rng);
        gp::FeatureMatrix A = random_rows(size(rng), rng, -2.0, 2.0);
        gp::FeatureMatrix B = random_rows(size(rng), rng, -2.0, 2.0);
        A.array() += s;
        B.array() += s;
        const Eigen::MatrixXd fast = gp::cross_kernel_fast(A, B, h);
        for (Eigen::Index i = 0; i < A.rows(); ++i) {
            for (Eigen::Index j = 0; j < B.rows(); ++j) {
                const double ref = oracle::se_kernel(A.row(i), B.row(j), h);
                worst = std::max(worst, std::abs(fast(i, j) - ref) / std::max(std::abs(ref), 1e-300));
            }
        }
    }
    Outcome o;
    o.pass = worst <= 1e-8;
    o.detail = "max relative error " + fmt(worst) + " over 100 draws (limit 1e-8)";
    return within(o, elapsed(t0), 10.0);
}

Outcome gradient_check() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1002);
    std::uniform_int_distribution<int> size(2, 20);
    constexpr double kStep = 1e-5;
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const gp::TrainingSet t = oracle::random_set(size(rng), rng);
        const gp::LogHyper theta = oracle::random_hyper(rng).to_log();
        const gp::LogHyper g = gp::nlml_grad(t, theta);
        for (int k = 0; k < 6; ++k) {
            gp::LogHyper up = theta;
            gp::LogHyper down = theta;
            up[k] += kStep;
            down[k] -= kStep;
            const double fd = (oracle::dense_nlml(t, gp::Hyperparams::from_log(up), 0.0) -
                               oracle::dense_nlml(t, gp::Hyperparams::from_log(down), 0.0)) /
                              (2.0 * kStep);
            worst = std::max(worst, std::abs(g[k] - fd) / std::max(std::abs(fd), 1e-6));
        }
    }
    Outcome o;
    o.pass = worst <= 1e-4;
    o.detail = "max relative error " + fmt(worst) + " over 20 instances x 6 components (limit 1e-4)";
    return within(o, elapsed(t0), 30.0);
}

Outcome tiny_oracle() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1003);
    std::uniform_real_distribution<double> mean(-0.5, 0.5);
    double worst = 0.0;
    for (int trial = 0; trial < 60; ++trial) {
        const int n = 1 + trial % 3;
        const gp::TrainingSet t = oracle::random_set(n, rng);
        const gp::Hyperparams h = oracle::random_hyper(rng);
        const double m0 = mean(rng);
        const gp::FeatureMatrix Xs = random_rows(5, rng, -1.5, 1.5);
        const auto expected =
            oracle::explicit_posterior_mean(t, Xs, h, m0, oracle::inverse_small(oracle::covariance(t.X, h)));
        const gp::Prediction p = gp::predict(gp::fit(t, h, m0), Xs);
        for (int q = 0; q < Xs.rows(); ++q) {
            worst = std::max(worst, std::abs(p.mean[q] - expected[static_cast<std::size_t>(q)]));
        }
    }
    Outcome o;
    o.pass = worst <= 1e-10;
    o.detail = "max absolute deviation " + fmt(worst) + " on N <= 3 (limit 1e-10)";
    return within(o, elapsed(t0), 1.0);
}

Outcome gp_sanity() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1004);
    std::vector<std::string> failures;

    double var_lo = 0.0;
    double var_hi_excess = -1.0;
    for (int trial = 0; trial < 30; ++trial) {
        const gp::TrainingSet t = oracle::random_set(40, rng);
        const gp::Hyperparams h = oracle::random_hyper(rng);
        const gp::Prediction p = gp::predict(gp::fit(t, h), random_rows(500, rng, -3.0, 3.0));
        var_lo = std::min(var_lo, p.variance.minCoeff());
        var_hi_excess = std::max(var_hi_excess, p.variance.maxCoeff() - h.prior_variance());
    }
    if (var_lo < 0.0 || var_hi_excess > 0.0) {
        failures.push_back("variance out of [0, prior]");
    }

    double interp = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        const gp::TrainingSet t = oracle::random_set(30, rng);
        gp::Hyperparams h;
        h.w.setConstant(1.0);
        h.sigma_s = 1.0;
        h.sigma_y = 1e-6;  // sigma_y^2 = 1e-12
        const gp::Prediction p = gp::predict(gp::fit(t, h), t.X);
        interp = std::max(interp, (p.mean - t.y).cwiseAbs().maxCoeff());
    }
    if (interp > 1e-4) {
        failures.push_back("interpolation error " + fmt(interp));
    }

    double prior_dev = 0.0;
    {
        const gp::TrainingSet t = oracle::random_set(30, rng);
        gp::Hyperparams h;
        h.w.setConstant(3.0);
        h.sigma_s = 0.5;
        h.sigma_y = 0.05;
        gp::FeatureMatrix far = random_rows(20, rng, -1.0, 1.0);
        far.col(0).array() += 100.0;
        const gp::Prediction p = gp::predict(gp::fit(t, h, 0.2), far);
        prior_dev = std::max((p.mean.array() - 0.2).abs().maxCoeff(),
                             (p.variance.array() - h.prior_variance()).abs().maxCoeff());
    }
    if (prior_dev > 1e-12) {
        failures.push_back("prior recovery deviation " + fmt(prior_dev));
    }

    double min_eig_ratio = std::numeric_limits<double>::infinity();
    for (int n = 2; n <= 50; n += 4) {
        const gp::Hyperparams h = oracle::random_hyper(rng);
        const Eigen::MatrixXd G = gp::gram_naive(random_rows(n, rng, -1.0, 1.0), h);
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G, Eigen::EigenvaluesOnly);
        min_eig_ratio = std::min(min_eig_ratio, eig.eigenvalues().minCoeff() / h.noise_variance());
    }
    if (min_eig_ratio < 1.0 - 1e-8) {
        failures.push_back("Gram eigenvalue below noise floor");
    }

    Outcome o;
    o.pass = failures.empty();
    o.detail = "variance in [" + fmt(var_lo) + ", prior" + (var_hi_excess > 0 ? "+" : "") + "]; interpolation " +
               fmt(interp) + " (limit 1e-4); prior deviation " + fmt(prior_dev) + "; min eig / sigma_y^2 " +
               fmt(min_eig_ratio);
    for (const auto& f : failures) {
        o.detail += "; FAILED: " + f;
    }
    return within(o, elapsed(t0), 30.0);
}

Outcome geometry_suite() {
    const auto t0 = Clock::now();
    std::vector<std::string> failures;
    std::mt19937_64 rng(1005);
    const CameraModel cam = CameraModel::default_for(640, 480);

    double round_trip = 0.0;
    std::uniform_real_distribution<double> ui(0.0, 639.0);
    std::uniform_real_distribution<double> uj(0.0, 479.0);
    std::uniform_real_distribution<double> ud(0.2, 10.0);
    for (int k = 0; k < 10000; ++k) {
        const double i = ui(rng);
        const double j = uj(rng);
        const double d = ud(rng);
        const PixelDepth back = project(reproject(i, j, d, cam), cam);
        round_trip = std::max({round_trip, std::abs(back.i - i), std::abs(back.j - j), std::abs(back.depth - d)});
    }
    if (round_trip > 1e-9) {
        failures.push_back("round trip " + fmt(round_trip));
    }

    DepthMap depth(640, 480);
    std::uniform_real_distribution<double> hole(0.0, 1.0);
    std::uniform_real_distribution<double> z(0.5, 0.9);
    for (std::size_t k = 0; k < depth.size(); ++k) {
        depth[k] = hole(rng) < 0.1 ? DepthMap::kMissing : z(rng);
    }
    CameraModel ir = cam;
    ir.extrinsics = Extrinsics{};
    const DepthMap aligned = align_depth_to_rgb(depth, ir, cam);
    bool identity = aligned.same_shape(depth);
    for (std::size_t k = 0; identity && k < depth.size(); ++k) {
        identity = DepthMap::is_missing(depth[k]) ? DepthMap::is_missing(aligned[k]) : aligned[k] == depth[k];
    }
    if (!identity) {
        failures.push_back("identity alignment changed the map");
    }

    const gp::FittedGP model = gp::fit(bench::random_training_set(400, 7), [] {
        gp::Hyperparams h;
        h.w << 2.0, 0.04, 1.29, 0.002;
        h.sigma_s = 0.031;
        h.sigma_y = 0.044;
        return h;
    }());
    // Correction checks run on a quarter-resolution frame.
    const CameraModel small_cam = CameraModel::default_for(160, 120);
    DepthMap small(160, 120);
    for (std::size_t k = 0; k < small.size(); ++k) {
        small[k] = hole(rng) < 0.1 ? DepthMap::kMissing : z(rng);
    }
    CorrectionOptions ref_opts;
    ref_opts.chunk = 4096;
    const CorrectionResult ref = correct_depth(small, 23.0, model, small_cam, ref_opts);
    bool closure = true;
    for (std::size_t k = 0; k < small.size(); ++k) {
        const bool m = DepthMap::is_missing(small[k]);
        closure = closure && DepthMap::is_missing(ref.corrected[k]) == m && DepthMap::is_missing(ref.confidence[k]) == m;
    }
    if (!closure) {
        failures.push_back("missing-value pattern not preserved");
    }

    double chunk_dev = 0.0;
    for (Eigen::Index chunk : {1, 64, 1000, 19200}) {
        CorrectionOptions o;
        o.chunk = chunk;
        const CorrectionResult r = correct_depth(small, 23.0, model, small_cam, o);
        for (std::size_t k = 0; k < small.size(); ++k) {
            if (!DepthMap::is_missing(small[k])) {
                chunk_dev = std::max({chunk_dev, std::abs(r.corrected[k] - ref.corrected[k]),
                                      std::abs(r.confidence[k] - ref.confidence[k])});
            }
        }
    }
    if (chunk_dev > 1e-12) {
        failures.push_back("chunk deviation " + fmt(chunk_dev));
    }

    Outcome o;
    o.pass = failures.empty();
    o.detail = "round trip " + fmt(round_trip) + " (limit 1e-9); identity alignment " + (identity ? "ok" : "broken") +
               "; missing closure " + (closure ? "ok" : "broken") + "; chunk deviation " + fmt(chunk_dev) +
               " (limit 1e-12)";
    for (const auto& f : failures) {
        o.detail += "; FAILED: " + f;
    }
    return within(o, elapsed(t0), 30.0);
}

Outcome determinism(const fs::path& config_dir, const fs::path& work) {
    const auto t0 = Clock::now();
    std::vector<fs::path> runs;
    for (const char* name : {"c7a", "c7b"}) {
        const pl::PipelineConfig c = relocate(config_dir / "desk.json", work / name);
        pl::cmd_generate(c);
        pl::cmd_train(c);
        pl::cmd_correct(c, 0.55, 20.0);
        pl::cmd_evaluate(c);
        runs.push_back(work / name);
    }
    std::size_t compared = 0;
    std::vector<std::string> differ;
    for (const auto& entry : fs::recursive_directory_iterator(runs[0])) {
        if (!entry.is_regular_file()) {
            continue;
        }
        const fs::path rel = fs::relative(entry.path(), runs[0]);
        ++compared;
        if (!fs::exists(runs[1] / rel) || file_bytes(entry.path()) != file_bytes(runs[1] / rel)) {
            differ.push_back(rel.string());
        }
    }
    Outcome o;
    o.pass = differ.empty() && compared > 0;
    o.detail = std::to_string(compared) + " files compared (PFM maps, manifest, model, report), " +
               std::to_string(differ.size()) + " differ";
    for (const auto& d : differ) {
        o.detail += " " + d;
    }
    return within(o, elapsed(t0), 240.0);
}

Outcome performance_floor() {
    gp::Hyperparams h;
    h.w << 2.0, 0.04, 1.29, 0.002;
    h.sigma_s = 0.031;
    h.sigma_y = 0.044;

    bench::KernelBenchOptions ko;
    ko.trials = 5;
    const auto [naive, fast] = bench::bench_kernel(5000, 640 * 480, h, ko);
    const double speedup = naive.seconds_per_frame / fast.seconds_per_frame;
    const bool equal = bench::checksums_match(naive.checksum, fast.checksum);

    const gp::FittedGP model = gp::fit(bench::random_training_set(5000, 11), h);
    const CameraModel cam = CameraModel::default_for(640, 480);
    DepthMap frame(640, 480);
    std::mt19937_64 rng(1008);
    std::uniform_real_distribution<double> z(0.55, 0.65);
    for (auto& v : frame.data()) {
        v = z(rng);
    }
    CorrectionOptions co;
    co.threads = 1;
    co.with_variance = false;
    const auto t0 = Clock::now();
    const CorrectionResult r = correct_depth(frame, 21.0, model, cam, co);
    const double correction_seconds = elapsed(t0);

    Outcome o;
    o.pass = speedup >= 3.0 && equal && correction_seconds < 60.0 && r.corrected.valid_count() == frame.size();
    o.detail = "kernel N=5000 M=307200: naive " + fmt(naive.seconds_per_frame) + " s, expanded-norm " +
               fmt(fast.seconds_per_frame) + " s, speedup " + fmt(speedup) + "x (need 3x), outputs " +
               (equal ? "equivalent" : "DIVERGE") + "; full-frame correction (posterior mean, 1 thread) " +
               fmt(correction_seconds) + " s (limit 60 s)";
    return o;
}

Outcome generalization(const fs::path& config_dir, const fs::path& work) {
    const auto t0 = Clock::now();
    const pl::PipelineConfig c = relocate(config_dir / "generalization.json", work / "c9");
    pl::cmd_generate(c);
    const pl::TrainSummary s = pl::cmd_train(c);
    const pl::EvalReport r = pl::cmd_evaluate(c);
    Outcome o;
    o.pass = r.after.z <= r.before.z / 3.0;
    o.detail = "trained on " + std::to_string(s.train_temperatures.size()) + " temperatures, evaluated on " +
               std::to_string(r.captures.size()) + " held-out captures: z-RMSE " + fmt(r.before.z) + " -> " +
               fmt(r.after.z) + " mm (" + fmt(r.before.z / r.after.z) + "x, need 3x); " + fmt(elapsed(t0)) + " s";
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance suite"};
    std::string work_dir = (fs::temp_directory_path() / "thermacal_acceptance").string();
    std::string config_dir = "configs";
    std::vector<int> only;
    app.add_option("--work-dir", work_dir, "Scratch directory for generated datasets");
    app.add_option("--config-dir", config_dir, "Directory holding desk.json and generalization.json");
    app.add_option("--only", only, "Run only these criteria")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    const fs::path work(work_dir);
    const fs::path configs(config_dir);
    fs::create_directories(work);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"order-of-magnitude correction", [&] { return order_of_magnitude(configs, work); }},
        {"fast/naive kernel equivalence", kernel_equivalence},
        {"gradient correctness", gradient_check},
        {"tiny-instance oracle equivalence", tiny_oracle},
        {"GP sanity suite", gp_sanity},
        {"geometry suite", geometry_suite},
        {"determinism", [&] { return determinism(configs, work); }},
        {"performance floor", performance_floor},
        {"generalization", [&] { return generalization(configs, work); }},
    };
    const std::set<int> selected(only.begin(), only.end());

    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int id = static_cast<int>(k) + 1;
        if (!selected.empty() && !selected.contains(id)) {
            continue;
        }
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("error: ") + e.what();
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[k].first
                  << "): " << o.detail << std::endl;
    }
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
    return failed == 0 ? 0 : 1;
}

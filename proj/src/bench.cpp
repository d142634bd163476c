#include "thermacal/bench.hpp"

#include "thermacal/error.hpp"
#include "thermacal/geometry.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <mutex>
#include <optional>
#include <random>
#include <thread>

namespace thermacal::bench {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

gp::FeatureMatrix random_features(Eigen::Index rows, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> lateral(-0.5, 0.5);
    std::uniform_real_distribution<double> depth(0.4, 1.0);
    std::uniform_real_distribution<double> temp(10.0, 35.0);
    gp::FeatureMatrix X(rows, gp::kFeatureDim);
    for (Eigen::Index r = 0; r < rows; ++r) {
        X(r, 0) = lateral(rng);
        X(r, 1) = lateral(rng);
        X(r, 2) = depth(rng);
        X(r, 3) = temp(rng);
    }
    return X;
}

struct Chunk {
    Eigen::Index start = 0;
    gp::FeatureMatrix X;
};

// Single-slot hand-off between the assembly and prediction stages.
class HandOff {
public:
    void put(Chunk chunk) {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return !slot_; });
        slot_ = std::move(chunk);
        cv_.notify_all();
    }

    void close() {
        std::lock_guard lock(mutex_);
        closed_ = true;
        cv_.notify_all();
    }

    std::optional<Chunk> take() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return slot_.has_value() || closed_; });
        if (!slot_) {
            return std::nullopt;
        }
        std::optional<Chunk> out = std::move(slot_);
        slot_.reset();
        cv_.notify_all();
        return out;
    }

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    std::optional<Chunk> slot_;
    bool closed_ = false;
};

}  // namespace

nlohmann::json BenchReport::to_json() const {
    nlohmann::json j = {{"variant", variant},
                        {"frame_pixels", frame_pixels},
                        {"n_train", n_train},
                        {"seconds_per_frame", seconds_per_frame},
                        {"fps", fps},
                        {"checksum", checksum}};
    if (!note.empty()) {
        j["note"] = note;
    }
    return j;
}

double median(std::vector<double> samples) {
    if (samples.empty()) {
        throw ContractError("median of an empty sample");
    }
    std::sort(samples.begin(), samples.end());
    const std::size_t mid = samples.size() / 2;
    return samples.size() % 2 == 1 ? samples[mid] : 0.5 * (samples[mid - 1] + samples[mid]);
}

bool checksums_match(double a, double b) {
    return std::abs(a - b) <= 1e-12 * std::max({std::abs(a), std::abs(b), 1.0});
}

gp::TrainingSet random_training_set(Eigen::Index n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    gp::TrainingSet set;
    set.X = random_features(n, rng);
    set.y.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const double dt = set.X(r, 3) - 10.0;
        set.y[r] = -(4e-4 * dt + 6e-5 * dt * dt) * set.X(r, 2) * set.X(r, 2);
    }
    return set;
}

std::pair<BenchReport, BenchReport> bench_kernel(Eigen::Index n, Eigen::Index m, const gp::Hyperparams& hyper,
                                                 const KernelBenchOptions& options) {
    hyper.validate();
    if (n < 1 || m < 1) {
        throw ContractError("bench_kernel: N and M must be positive");
    }
    if (static_cast<double>(n) * static_cast<double>(m) > 2e9) {
        throw ContractError("bench_kernel: N * M exceeds the 2e9 entry budget");
    }
    if (options.trials < 1 || options.block < 1) {
        throw ContractError("bench_kernel: trials and block must be positive");
    }

    std::mt19937_64 rng(options.seed);
    gp::FeatureMatrix A = random_features(n, rng);
    gp::FeatureMatrix B = random_features(m, rng);
    // Centre both sets on A's mean; the kernel is translation invariant and
    // the expansion loses less to cancellation near the origin.
    const Eigen::RowVector4d offset = A.colwise().mean();
    A.rowwise() -= offset;
    B.rowwise() -= offset;
    const Eigen::Index block = std::min(options.block, m);
    Eigen::MatrixXd naive(n, block);
    Eigen::MatrixXd fast(n, block);

    // One pass over all query blocks. Each variant is timed per block; the
    // comparison between them is not.
    auto run_pass = [&](Eigen::Index columns, double& naive_seconds, double& fast_seconds, double& naive_sum,
                        double& fast_sum) {
        naive_seconds = fast_seconds = naive_sum = fast_sum = 0.0;
        auto t_setup = Clock::now();
        const gp::ScaledFeatures sa(A, hyper);
        fast_seconds += seconds_since(t_setup);
        for (Eigen::Index start = 0; start < columns; start += block) {
            const Eigen::Index count = std::min(block, columns - start);

            auto t0 = Clock::now();
            for (Eigen::Index j = 0; j < count; ++j) {
                for (Eigen::Index i = 0; i < n; ++i) {
                    naive(i, j) = gp::kernel_eval(A.row(i), B.row(start + j), false, hyper);
                }
            }
            naive_seconds += seconds_since(t0);

            t0 = Clock::now();
            const gp::ScaledFeatures sb(B.middleRows(start, count), hyper);
            gp::cross_kernel_block(sa, sb, hyper.signal_variance(), fast.leftCols(count));
            fast_seconds += seconds_since(t0);

            for (Eigen::Index j = 0; j < count; ++j) {
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double ref = naive(i, j);
                    const double rel = std::abs(fast(i, j) - ref) / std::max(std::abs(ref), 1e-300);
                    if (!(rel <= options.tolerance)) {
                        throw NumericalError("bench_kernel: fast kernel deviates from naive loop (relative " +
                                             std::to_string(rel) + ")");
                    }
                    naive_sum += ref;
                    fast_sum += fast(i, j);
                }
            }
        }
    };

    double ns = 0.0, fs = 0.0, nsum = 0.0, fsum = 0.0;
    run_pass(block, ns, fs, nsum, fsum);  // warm-up on the first block

    std::vector<double> naive_times;
    std::vector<double> fast_times;
    for (int t = 0; t < options.trials; ++t) {
        run_pass(m, ns, fs, nsum, fsum);
        naive_times.push_back(ns);
        fast_times.push_back(fs);
    }

    auto make = [&](const char* name, double seconds, double checksum) {
        BenchReport r;
        r.variant = name;
        r.frame_pixels = m;
        r.n_train = n;
        r.seconds_per_frame = seconds;
        r.fps = seconds > 0.0 ? 1.0 / seconds : 0.0;
        r.checksum = checksum;
        return r;
    };
    return {make("naive_loop", median(naive_times), nsum), make("expanded_norm", median(fast_times), fsum)};
}

DepthMap staged_correction(const DepthMap& depth, double temp, const gp::FittedGP& gp, const CameraModel& cam,
                           Eigen::Index chunk, bool prefetch, StageTimes* times) {
    if (chunk < 1) {
        throw ContractError("staged_correction: chunk must be at least 1");
    }
    std::vector<std::pair<int, int>> pixels;
    pixels.reserve(depth.size());
    for (int j = 0; j < depth.height(); ++j) {
        for (int i = 0; i < depth.width(); ++i) {
            if (!depth.missing(i, j)) {
                pixels.emplace_back(i, j);
            }
        }
    }
    const auto m = static_cast<Eigen::Index>(pixels.size());

    auto assemble = [&](Eigen::Index start) {
        const Eigen::Index count = std::min(chunk, m - start);
        Chunk c;
        c.start = start;
        c.X.resize(count, gp::kFeatureDim);
        for (Eigen::Index r = 0; r < count; ++r) {
            const auto [i, j] = pixels[static_cast<std::size_t>(start + r)];
            const Eigen::Vector3d p = reproject(i, j, depth.at(i, j), cam);
            c.X.row(r) << p.x(), p.y(), p.z(), temp;
        }
        return c;
    };

    DepthMap delta(depth.width(), depth.height());
    StageTimes local;
    auto consume = [&](const Chunk& c) {
        const auto t0 = Clock::now();
        const gp::Prediction p = gp::predict(gp, c.X, false);
        for (Eigen::Index r = 0; r < c.X.rows(); ++r) {
            const auto [i, j] = pixels[static_cast<std::size_t>(c.start + r)];
            delta.at(i, j) = p.mean[r];
        }
        local.predict_seconds += seconds_since(t0);
    };

    if (!prefetch) {
        for (Eigen::Index start = 0; start < m; start += chunk) {
            const auto t0 = Clock::now();
            const Chunk c = assemble(start);
            local.assemble_seconds += seconds_since(t0);
            consume(c);
        }
    } else {
        HandOff channel;
        double assemble_seconds = 0.0;
        std::jthread producer([&] {
            for (Eigen::Index start = 0; start < m; start += chunk) {
                const auto t0 = Clock::now();
                Chunk c = assemble(start);
                assemble_seconds += seconds_since(t0);
                channel.put(std::move(c));
            }
            channel.close();
        });
        while (auto c = channel.take()) {
            consume(*c);
        }
        producer.join();
        local.assemble_seconds = assemble_seconds;
    }
    if (times != nullptr) {
        *times = local;
    }
    return delta;
}

std::vector<BenchReport> bench_pipeline(const DepthMap& depth, double temp, const gp::FittedGP& gp,
                                        const CameraModel& cam, const PipelineBenchOptions& options) {
    if (options.trials < 1) {
        throw ContractError("bench_pipeline: trials must be positive");
    }
    const auto pixels = static_cast<long long>(depth.valid_count());

    auto checksum_of = [](const DepthMap& d) {
        double sum = 0.0;
        for (double v : d.data()) {
            if (!DepthMap::is_missing(v)) {
                sum += v;
            }
        }
        return sum;
    };

    auto run = [&](Eigen::Index chunk, bool prefetch, const std::string& name) {
        StageTimes stage;
        DepthMap out = staged_correction(depth, temp, gp, cam, chunk, prefetch, &stage);  // warm-up
        std::vector<double> samples;
        for (int t = 0; t < options.trials; ++t) {
            const auto t0 = Clock::now();
            out = staged_correction(depth, temp, gp, cam, chunk, prefetch, &stage);
            samples.push_back(seconds_since(t0));
        }
        BenchReport r;
        r.variant = name;
        r.frame_pixels = pixels;
        r.n_train = gp.size();
        r.seconds_per_frame = median(samples);
        r.fps = r.seconds_per_frame > 0.0 ? 1.0 / r.seconds_per_frame : 0.0;
        r.checksum = checksum_of(out);
        const double total = stage.assemble_seconds + stage.predict_seconds;
        const double share = total > 0.0 ? stage.assemble_seconds / total : 0.0;
        r.note = "assembly share " + std::to_string(share);
        return r;
    };

    std::vector<BenchReport> reports;
    const Eigen::Index full = std::max<Eigen::Index>(1, pixels);
    reports.push_back(run(full, false, "full_frame_sequential"));
    const double baseline_checksum = reports.front().checksum;

    for (Eigen::Index chunk : options.chunk_sizes) {
        BenchReport sequential;
        for (bool prefetch : options.prefetch) {
            BenchReport r = run(chunk, prefetch,
                                "chunk_" + std::to_string(chunk) + (prefetch ? "_prefetch" : "_sequential"));
            if (!checksums_match(r.checksum, baseline_checksum)) {
                throw NumericalError("bench_pipeline: output checksum of " + r.variant + " diverges from baseline");
            }
            if (!prefetch) {
                sequential = r;
            } else if (!sequential.variant.empty()) {
                const double speedup = sequential.seconds_per_frame / r.seconds_per_frame;
                r.note += "; speedup over sequential " + std::to_string(speedup);
                if (speedup < 1.05) {
                    r.note += "; overlap gain below 1.05x (assembly share under 5% or only " +
                              std::to_string(std::thread::hardware_concurrency()) + " hardware thread(s))";
                }
            }
            reports.push_back(r);
        }
    }
    return reports;
}

}  // namespace thermacal::bench

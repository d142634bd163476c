#pragma once

#include "thermacal/camera.hpp"
#include "thermacal/depth_map.hpp"
#include "thermacal/gp.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace thermacal::bench {

struct BenchReport {
    std::string variant;
    /// Query points per frame (M).
    long long frame_pixels = 0;
    long long n_train = 0;
    double seconds_per_frame = 0.0;
    double fps = 0.0;
    /// Sum of all outputs; equal across variants up to 1e-12 relative.
    double checksum = 0.0;
    std::string note;

    nlohmann::json to_json() const;
};

/// Median of `samples`; samples must be non-empty.
double median(std::vector<double> samples);

/// Checksums agree within 1e-12 relative (absolute near zero).
bool checksums_match(double a, double b);

struct KernelBenchOptions {
    int trials = 5;
    /// Query columns per block; bounds memory at N x block per variant.
    Eigen::Index block = 256;
    std::uint64_t seed = 1;
    /// Maximum relative elementwise deviation tolerated between variants.
    double tolerance = 1e-8;
};

/// Times the direct double loop against the expanded-norm cross kernel on
/// the same random N x 4 and M x 4 inputs. Every block is compared
/// elementwise first; a mismatch throws NumericalError. Returns
/// (naive, fast). N * M is capped at 2e9 entries.
std::pair<BenchReport, BenchReport> bench_kernel(Eigen::Index n, Eigen::Index m, const gp::Hyperparams& hyper,
                                                 const KernelBenchOptions& options = {});

struct StageTimes {
    double assemble_seconds = 0.0;
    double predict_seconds = 0.0;
};

/// Posterior-mean correction of one frame in two stages: feature assembly of
/// chunk k+1 and prediction of chunk k. With `prefetch` the stages run on two
/// threads joined by a one-slot hand-off; otherwise they alternate on the
/// calling thread. Returns the per-pixel delta (missing where depth is).
DepthMap staged_correction(const DepthMap& depth, double temp, const gp::FittedGP& gp, const CameraModel& cam,
                           Eigen::Index chunk, bool prefetch, StageTimes* times = nullptr);

struct PipelineBenchOptions {
    std::vector<Eigen::Index> chunk_sizes{16384};
    std::vector<bool> prefetch{false, true};
    int trials = 5;
};

/// End-to-end throughput per (chunk, prefetch) configuration. Also runs a
/// full-frame, no-prefetch baseline first. Throws NumericalError if any
/// configuration's output checksum diverges from the baseline.
std::vector<BenchReport> bench_pipeline(const DepthMap& depth, double temp, const gp::FittedGP& gp,
                                        const CameraModel& cam, const PipelineBenchOptions& options = {});

/// Random training set in the rig's domain, for benchmarks and tests.
gp::TrainingSet random_training_set(Eigen::Index n, std::uint64_t seed);

}  // namespace thermacal::bench

#pragma once

// Deterministic stand-in for a temperature-controlled capture rig: a camera on
// a linear axis looking at a fronto-parallel plane, with a smooth thermal
// drift and per-frame sensor noise.

#include "thermacal/camera.hpp"
#include "thermacal/depth_map.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace thermacal::sim {

struct RigConfig {
    double temp_min = 10.0;
    double temp_max = 35.0;
    double temp_step = 1.0;
    std::vector<double> positions{0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    int frames_per_capture = 50;
    int width = 640;
    int height = 480;
    std::uint64_t rng_seed = 42;
    /// Emit one frame with noise_std / sqrt(frames) instead of averaging
    /// frames_per_capture frames.
    bool direct_mean = false;
    int threads = 1;

    /// temp_min < temp_max, temp_step > 0, positions within [0.4, 1.0].
    void validate() const;
    std::vector<double> temperatures() const;
};

/// delta(x, y, z, t) = (a + b dt + c dt^2) z^2 + d x z + e y z with
/// dt = t - t_ref. The ground-truth (RGB-derived) depth may carry its own
/// small linear drift rgb_slope * dt * z.
struct DriftModel {
    double a = 0.0;
    double b = 4e-4;
    double c = 6e-5;
    double d = 2e-3;
    double e = 1.5e-3;
    double t_ref = 10.0;
    /// Per raw frame, meters.
    double noise_std = 1.5e-3;
    /// Fraction of pixels dropped per raw frame.
    double dropout = 0.005;
    double rgb_slope = 0.0;

    double operator()(double x, double y, double z, double t) const;
    double rgb_drift(double z, double t) const { return rgb_slope * (t - t_ref) * z; }

    static DriftModel zero();
};

/// Fronto-parallel plane at `position` (plus the optional RGB drift at temp).
DepthMap synth_ground_truth(double position, const CameraModel& cam, int width, int height);
DepthMap synth_ground_truth(double position, double temp, const DriftModel& drift, const CameraModel& cam,
                            int width, int height);

/// One raw sensor frame. Noise and dropout are keyed on
/// (seed, position, temperature, frame_index, pixel), so any subset of frames
/// can be produced independently and in any order.
DepthMap synth_observed_frame(double position, double temp, const DriftModel& drift, const CameraModel& cam,
                              int width, int height, int frame_index, std::uint64_t seed);

/// Per-pixel mean over non-missing samples.
DepthMap mean_depth_map(const std::vector<DepthMap>& frames);

/// Mean observed map for one (position, temperature) capture.
DepthMap synth_capture(const RigConfig& config, const DriftModel& drift, const CameraModel& cam, double position,
                       double temp);

struct ManifestEntry {
    double position = 0.0;
    double temperature = 0.0;
    std::string obs;
    std::string gt;
};

struct Manifest {
    int version = 1;
    std::uint64_t seed = 0;
    RigConfig config;
    DriftModel drift;
    CameraModel camera;
    /// Position-major, then ascending temperature.
    std::vector<ManifestEntry> entries;

    nlohmann::json to_json() const;
    static Manifest from_json(const nlohmann::json& j);

    const ManifestEntry* find(double position, double temperature) const;
};

/// "p<mm>_t<deci-degrees>" capture key used in file names.
std::string capture_key(double position, double temperature);

/// Writes every capture's mean observed map and ground truth as PFM, plus
/// manifest.json, into out_dir.
Manifest generate_dataset(const RigConfig& config, const DriftModel& drift, const CameraModel& cam,
                          const std::filesystem::path& out_dir);

Manifest load_manifest(const std::filesystem::path& dataset_dir);

nlohmann::json rig_to_json(const RigConfig& config);
RigConfig rig_from_json(const nlohmann::json& j, RigConfig defaults = {});
nlohmann::json drift_to_json(const DriftModel& drift);
DriftModel drift_from_json(const nlohmann::json& j, DriftModel defaults = {});

}  // namespace thermacal::sim

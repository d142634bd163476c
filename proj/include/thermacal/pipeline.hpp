#pragma once

#include "thermacal/camera.hpp"
#include "thermacal/geometry.hpp"
#include "thermacal/gp.hpp"
#include "thermacal/thermal_sim.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace thermacal::pipeline {

enum class TargetMode {
    /// y = D_gt(p, t_min) - D_obs(p, t): reference depth minus sensor depth.
    kGtMinusObs,
    /// y = D_rgb(p, t_min) - D_rgb(p, t): both operands from the reference camera.
    kRgbDelta,
};

TargetMode target_mode_from_string(const std::string& s);
std::string to_string(TargetMode mode);

struct OptimizerSettings {
    int max_iters = 150;
    double tol = 1e-5;
    /// Hyperparameters are tuned on at most this many grid samples (evenly
    /// strided); the final model is fitted on all of them.
    int max_points = 600;
    /// Use the target sample mean as the constant prior mean instead of 0.
    bool target_mean = false;
};

struct PipelineConfig {
    std::filesystem::path dataset_dir = "dataset";
    std::filesystem::path model_path = "model.tgp";
    std::filesystem::path report_path = "report.json";
    std::filesystem::path output_dir = "corrected";

    sim::RigConfig rig;
    sim::DriftModel drift;
    /// Defaults to CameraModel::default_for(rig.width, rig.height).
    std::optional<CameraModel> camera;

    TargetMode target_mode = TargetMode::kGtMinusObs;
    /// The temperature origin is re-anchored at t_min - cell/2 so every
    /// training temperature sits at a cell centre.
    GridSpec grid;
    /// Training uses temperatures t_min + k * train_temp_step (plus t_max);
    /// the others are held out for evaluation.
    double train_temp_step = 3.0;
    OptimizerSettings optimizer;
    Eigen::Index chunk = 4096;
    int threads = 1;
    /// Train on every temperature and evaluate in-sample.
    bool in_sample = false;
    /// Must equal the dataset's minimum temperature when given.
    std::optional<double> t_min;

    CameraModel camera_model() const;
    nlohmann::json to_json() const;
    static PipelineConfig from_json(const nlohmann::json& j);
    static PipelineConfig load(const std::filesystem::path& path);
};

/// Caps a requested thread count by the THERMACAL_THREADS environment variable.
int effective_threads(int requested);

sim::Manifest cmd_generate(const PipelineConfig& config);

struct TrainingSplit {
    double t_min = 0.0;
    std::vector<double> train_temperatures;
    std::vector<double> eval_temperatures;
};

/// Which temperatures feed training and which are evaluated.
TrainingSplit split_temperatures(const sim::Manifest& manifest, const PipelineConfig& config);

/// Features and targets from the training captures, grid-sampled.
gp::TrainingSet assemble_training_set(const PipelineConfig& config, const sim::Manifest& manifest,
                                      const TrainingSplit& split);

struct TrainSummary {
    Eigen::Index n = 0;
    Eigen::Index n_optimized = 0;
    gp::Hyperparams init;
    gp::Hyperparams hyper;
    double initial_nlml = 0.0;
    double final_nlml = 0.0;
    int iterations = 0;
    bool converged = false;
    bool warning = false;
    std::vector<double> train_temperatures;

    nlohmann::json to_json() const;
};

/// Default initialisation: sigma_s = target std, sigma_y = sigma_s / 3,
/// w = 1 / per-column variance of X.
gp::Hyperparams default_init(const gp::TrainingSet& train);

TrainSummary cmd_train(const PipelineConfig& config);

struct CorrectOutput {
    std::filesystem::path corrected;
    std::filesystem::path confidence;
};

CorrectOutput cmd_correct(const PipelineConfig& config, double position, double temperature);

struct CaptureScore {
    double position = 0.0;
    double temperature = 0.0;
    RmseXyz before;
    RmseXyz after;
};

struct EvalReport {
    std::string protocol;
    RmseXyz before;
    RmseXyz after;
    std::vector<CaptureScore> captures;

    nlohmann::json to_json() const;
    /// Two-row table (before / after) in millimeters.
    std::string to_text() const;
};

EvalReport cmd_evaluate(const PipelineConfig& config);

}  // namespace thermacal::pipeline

#include "thermacal/pipeline.hpp"

#include "thermacal/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace thermacal::pipeline {

namespace {

template <typename T>
T value_or(const nlohmann::json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

bool contains_temp(const std::vector<double>& temps, double t) {
    return std::any_of(temps.begin(), temps.end(), [t](double v) { return std::abs(v - t) < 1e-6; });
}

std::vector<double> sorted_unique(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end(), [](double a, double b) { return std::abs(a - b) < 1e-6; }), v.end());
    return v;
}

// Reference depth for a position: the ground truth captured at t_min.
DepthMap reference_map(const PipelineConfig& config, const sim::Manifest& manifest, double position, double t_min) {
    const sim::ManifestEntry* ref = manifest.find(position, t_min);
    if (ref == nullptr) {
        throw LookupError("dataset has no reference capture " + sim::capture_key(position, t_min));
    }
    return read_pfm(config.dataset_dir / ref->gt);
}

nlohmann::json rmse_json(const RmseXyz& r) { return {{"x", r.x}, {"y", r.y}, {"z", r.z}}; }

nlohmann::json hyper_json(const gp::Hyperparams& h) {
    return {{"w", {h.w[0], h.w[1], h.w[2], h.w[3]}}, {"sigma_s", h.sigma_s}, {"sigma_y", h.sigma_y}};
}

}  // namespace

TargetMode target_mode_from_string(const std::string& s) {
    if (s == "gt_minus_obs") {
        return TargetMode::kGtMinusObs;
    }
    if (s == "rgb_delta") {
        return TargetMode::kRgbDelta;
    }
    throw ContractError("unknown target mode '" + s + "' (expected gt_minus_obs or rgb_delta)");
}

std::string to_string(TargetMode mode) {
    return mode == TargetMode::kGtMinusObs ? "gt_minus_obs" : "rgb_delta";
}

CameraModel PipelineConfig::camera_model() const {
    return camera ? *camera : CameraModel::default_for(rig.width, rig.height);
}

nlohmann::json PipelineConfig::to_json() const {
    nlohmann::json j = {
        {"dataset_dir", dataset_dir.string()},
        {"model_path", model_path.string()},
        {"report_path", report_path.string()},
        {"output_dir", output_dir.string()},
        {"rig", sim::rig_to_json(rig)},
        {"drift", sim::drift_to_json(drift)},
        {"target_mode", to_string(target_mode)},
        {"grid",
         {{"cell", {grid.cell[0], grid.cell[1], grid.cell[2], grid.cell[3]}},
          {"origin", {grid.origin[0], grid.origin[1], grid.origin[2], grid.origin[3]}}}},
        {"train_temp_step", train_temp_step},
        {"optimizer",
         {{"max_iters", optimizer.max_iters},
          {"tol", optimizer.tol},
          {"max_points", optimizer.max_points},
          {"target_mean", optimizer.target_mean}}},
        {"chunk", chunk},
        {"threads", threads},
        {"in_sample", in_sample},
    };
    if (camera) {
        j["camera"] = camera_to_json(*camera);
    }
    if (t_min) {
        j["t_min"] = *t_min;
    }
    return j;
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
    PipelineConfig c;
    try {
        c.dataset_dir = value_or<std::string>(j, "dataset_dir", c.dataset_dir.string());
        c.model_path = value_or<std::string>(j, "model_path", c.model_path.string());
        c.report_path = value_or<std::string>(j, "report_path", c.report_path.string());
        c.output_dir = value_or<std::string>(j, "output_dir", c.output_dir.string());
        if (j.contains("rig")) {
            c.rig = sim::rig_from_json(j.at("rig"));
        }
        if (j.contains("drift")) {
            c.drift = sim::drift_from_json(j.at("drift"));
        }
        if (j.contains("camera")) {
            c.camera = camera_from_json(j.at("camera"));
        }
        if (j.contains("target_mode")) {
            c.target_mode = target_mode_from_string(j.at("target_mode").get<std::string>());
        }
        if (j.contains("grid")) {
            const auto& g = j.at("grid");
            if (g.contains("cell")) {
                const auto v = g.at("cell").get<std::vector<double>>();
                if (v.size() != 4) {
                    throw ContractError("grid.cell needs 4 numbers");
                }
                c.grid.cell = Eigen::Vector4d(v[0], v[1], v[2], v[3]);
            }
            if (g.contains("origin")) {
                const auto v = g.at("origin").get<std::vector<double>>();
                if (v.size() != 4) {
                    throw ContractError("grid.origin needs 4 numbers");
                }
                c.grid.origin = Eigen::Vector4d(v[0], v[1], v[2], v[3]);
            }
            c.grid.validate();
        }
        c.train_temp_step = value_or(j, "train_temp_step", c.train_temp_step);
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            c.optimizer.max_iters = value_or(o, "max_iters", c.optimizer.max_iters);
            c.optimizer.tol = value_or(o, "tol", c.optimizer.tol);
            c.optimizer.max_points = value_or(o, "max_points", c.optimizer.max_points);
            c.optimizer.target_mean = value_or(o, "target_mean", c.optimizer.target_mean);
        }
        c.chunk = value_or<Eigen::Index>(j, "chunk", c.chunk);
        c.threads = value_or(j, "threads", c.threads);
        c.in_sample = value_or(j, "in_sample", c.in_sample);
        if (j.contains("t_min")) {
            c.t_min = j.at("t_min").get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ContractError(std::string("pipeline config: ") + e.what());
    }
    if (!(c.train_temp_step > 0.0) || c.chunk < 1 || c.optimizer.max_points < 1) {
        throw ContractError("pipeline config: train_temp_step, chunk and optimizer.max_points must be positive");
    }
    return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config: " + path.string());
    }
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ContractError(path.string() + ": " + e.what());
    }
}

int effective_threads(int requested) {
    int threads = std::max(1, requested);
    if (const char* env = std::getenv("THERMACAL_THREADS")) {
        const int cap = std::atoi(env);
        if (cap > 0) {
            threads = std::min(threads, cap);
        }
    }
    return threads;
}

sim::Manifest cmd_generate(const PipelineConfig& config) {
    sim::RigConfig rig = config.rig;
    rig.threads = effective_threads(rig.threads);
    return sim::generate_dataset(rig, config.drift, config.camera_model(), config.dataset_dir);
}

TrainingSplit split_temperatures(const sim::Manifest& manifest, const PipelineConfig& config) {
    std::vector<double> temps;
    std::vector<double> positions;
    for (const auto& e : manifest.entries) {
        temps.push_back(e.temperature);
        positions.push_back(e.position);
    }
    temps = sorted_unique(std::move(temps));
    positions = sorted_unique(std::move(positions));
    if (temps.size() < 2 || positions.size() < 2) {
        throw ContractError("dataset needs at least 2 temperatures and 2 positions");
    }

    TrainingSplit split;
    split.t_min = temps.front();
    if (config.t_min && std::abs(*config.t_min - split.t_min) > 1e-6) {
        throw ContractError("configured t_min does not match the dataset's minimum temperature");
    }
    for (double t : temps) {
        const double k = (t - split.t_min) / config.train_temp_step;
        const bool on_stride = std::abs(k - std::round(k)) < 1e-6;
        if (config.in_sample || on_stride || t == temps.back()) {
            split.train_temperatures.push_back(t);
        }
        if (config.in_sample ? t != split.t_min : !(on_stride || t == temps.back())) {
            split.eval_temperatures.push_back(t);
        }
    }
    return split;
}

gp::TrainingSet assemble_training_set(const PipelineConfig& config, const sim::Manifest& manifest,
                                      const TrainingSplit& split) {
    const CameraModel cam = manifest.camera;
    GridSpec grid = config.grid;
    grid.origin[3] = split.t_min - 0.5 * grid.cell[3];
    GridAccumulator acc(grid);

    std::map<long long, DepthMap> references;
    for (const auto& e : manifest.entries) {
        if (!contains_temp(split.train_temperatures, e.temperature)) {
            continue;
        }
        const long long pkey = std::llround(e.position * 1e6);
        if (!references.contains(pkey)) {
            references.emplace(pkey, reference_map(config, manifest, e.position, split.t_min));
        }
        const DepthMap& ref = references.at(pkey);
        const DepthMap obs = read_pfm(config.dataset_dir / e.obs);
        obs.validate_depth();

        DepthMap target;
        if (config.target_mode == TargetMode::kGtMinusObs) {
            target = build_targets(ref, obs);
        } else {
            target = build_targets(ref, read_pfm(config.dataset_dir / e.gt));
        }
        // Only pixels with both a feature and a target contribute.
        DepthMap masked = obs;
        for (std::size_t k = 0; k < masked.size(); ++k) {
            if (DepthMap::is_missing(target[k])) {
                masked[k] = DepthMap::kMissing;
            }
        }
        const Features f = build_features(masked, e.temperature, cam);
        Eigen::VectorXd y(f.size());
        for (Eigen::Index r = 0; r < f.size(); ++r) {
            y[r] = target.at(f.pixel_index(r, 0), f.pixel_index(r, 1));
        }
        acc.add(f.X, y);
    }
    return acc.finish();
}

gp::Hyperparams default_init(const gp::TrainingSet& train) {
    gp::Hyperparams h;
    const double n = static_cast<double>(train.size());
    const double y_mean = train.y.mean();
    const double y_std = std::sqrt((train.y.array() - y_mean).square().sum() / n);
    h.sigma_s = std::max(y_std, 1e-6);
    h.sigma_y = h.sigma_s / 3.0;
    const Eigen::RowVector4d mean = train.X.colwise().mean();
    for (int k = 0; k < gp::kFeatureDim; ++k) {
        const double var = (train.X.col(k).array() - mean[k]).square().sum() / n;
        h.w[k] = var > 1e-12 ? 1.0 / var : 1.0;
    }
    return h;
}

nlohmann::json TrainSummary::to_json() const {
    return {{"n", n},
            {"n_optimized", n_optimized},
            {"init", hyper_json(init)},
            {"hyper", hyper_json(hyper)},
            {"initial_nlml", initial_nlml},
            {"final_nlml", final_nlml},
            {"iterations", iterations},
            {"converged", converged},
            {"warning", warning},
            {"train_temperatures", train_temperatures}};
}

TrainSummary cmd_train(const PipelineConfig& config) {
    const sim::Manifest manifest = sim::load_manifest(config.dataset_dir);
    const TrainingSplit split = split_temperatures(manifest, config);
    const gp::TrainingSet train = assemble_training_set(config, manifest, split);
    if (train.size() == 0) {
        throw ContractError("training set is empty after grid sampling");
    }

    gp::TrainingSet subset = train;
    const auto limit = static_cast<Eigen::Index>(config.optimizer.max_points);
    if (train.size() > limit) {
        subset.X.resize(limit, gp::kFeatureDim);
        subset.y.resize(limit);
        for (Eigen::Index k = 0; k < limit; ++k) {
            const Eigen::Index src = k * train.size() / limit;
            subset.X.row(k) = train.X.row(src);
            subset.y[k] = train.y[src];
        }
    }

    TrainSummary summary;
    summary.n = train.size();
    summary.n_optimized = subset.size();
    summary.train_temperatures = split.train_temperatures;
    summary.init = default_init(subset);

    gp::OptimizeOptions options;
    options.max_iters = config.optimizer.max_iters;
    options.tol = config.optimizer.tol;
    options.mean_const = config.optimizer.target_mean ? train.y.mean() : 0.0;
    const gp::OptimizeResult opt = gp::optimize_hyper(subset, summary.init, options);
    summary.hyper = opt.hyper;
    summary.initial_nlml = opt.initial_nlml;
    summary.final_nlml = opt.final_nlml;
    summary.iterations = opt.iterations;
    summary.converged = opt.converged;
    summary.warning = opt.warning;

    const gp::FittedGP model = gp::fit(train, opt.hyper, options.mean_const);
    if (config.model_path.has_parent_path()) {
        std::filesystem::create_directories(config.model_path.parent_path());
    }
    gp::save_model(model, config.model_path);
    return summary;
}

CorrectOutput cmd_correct(const PipelineConfig& config, double position, double temperature) {
    const sim::Manifest manifest = sim::load_manifest(config.dataset_dir);
    const sim::ManifestEntry* entry = manifest.find(position, temperature);
    if (entry == nullptr) {
        std::ostringstream msg;
        msg << "no capture " << sim::capture_key(position, temperature) << "; available:";
        for (const auto& e : manifest.entries) {
            msg << ' ' << sim::capture_key(e.position, e.temperature);
        }
        throw LookupError(msg.str());
    }
    const gp::FittedGP model = gp::load_model(config.model_path);
    const DepthMap obs = read_pfm(config.dataset_dir / entry->obs);
    obs.validate_depth();

    CorrectionOptions options;
    options.chunk = config.chunk;
    options.threads = effective_threads(config.threads);
    const CorrectionResult result = correct_depth(obs, entry->temperature, model, manifest.camera, options);

    std::filesystem::create_directories(config.output_dir);
    const std::string key = sim::capture_key(entry->position, entry->temperature);
    CorrectOutput out{config.output_dir / (key + "_corrected.pfm"), config.output_dir / (key + "_confidence.pfm")};
    write_pfm(result.corrected, out.corrected);
    write_pfm(result.confidence, out.confidence);
    return out;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& c : captures) {
        rows.push_back({{"position", c.position},
                        {"temperature", c.temperature},
                        {"before_mm", rmse_json(c.before)},
                        {"after_mm", rmse_json(c.after)}});
    }
    return {{"protocol", protocol},
            {"rmse_before_mm", rmse_json(before)},
            {"rmse_after_mm", rmse_json(after)},
            {"captures", rows},
            {"reference_hardware_result",
             {{"note", "published hardware measurement, not reproduced here"},
              {"rmse_before_mm", {{"x", 5.7}, {"y", 3.7}, {"z", 16.0}}},
              {"rmse_after_mm", {{"x", 0.7}, {"y", 0.5}, {"z", 2.2}}}}}};
}

std::string EvalReport::to_text() const {
    std::ostringstream out;
    out << std::fixed << std::setprecision(2);
    out << "protocol: " << protocol << " (" << captures.size() << " captures)\n";
    out << "                         x (mm)    y (mm)    z (mm)\n";
    out << "RMSE before correction " << std::setw(8) << before.x << "  " << std::setw(8) << before.y << "  "
        << std::setw(8) << before.z << '\n';
    out << "RMSE after correction  " << std::setw(8) << after.x << "  " << std::setw(8) << after.y << "  "
        << std::setw(8) << after.z << '\n';
    out << std::setprecision(1);
    out << "reference (published hardware result, not a target here):\n";
    out << "  before " << 5.7 << " / " << 3.7 << " / " << 16.0 << "   after " << 0.7 << " / " << 0.5 << " / " << 2.2
        << '\n';
    return out.str();
}

EvalReport cmd_evaluate(const PipelineConfig& config) {
    const sim::Manifest manifest = sim::load_manifest(config.dataset_dir);
    const TrainingSplit split = split_temperatures(manifest, config);
    if (split.eval_temperatures.empty()) {
        throw ContractError("no held-out temperatures to evaluate; use the in-sample protocol");
    }
    const gp::FittedGP model = gp::load_model(config.model_path);

    CorrectionOptions options;
    options.chunk = config.chunk;
    options.with_variance = false;
    options.threads = effective_threads(config.threads);

    EvalReport report;
    report.protocol = config.in_sample ? "in-sample" : "held-out temperatures";
    RmseAccumulator before;
    RmseAccumulator after;
    std::map<long long, DepthMap> references;
    // Manifest order fixes the aggregation order.
    for (const auto& e : manifest.entries) {
        if (!contains_temp(split.eval_temperatures, e.temperature)) {
            continue;
        }
        const long long pkey = std::llround(e.position * 1e6);
        if (!references.contains(pkey)) {
            references.emplace(pkey, reference_map(config, manifest, e.position, split.t_min));
        }
        const DepthMap& ref = references.at(pkey);
        const DepthMap obs = read_pfm(config.dataset_dir / e.obs);
        const CorrectionResult result = correct_depth(obs, e.temperature, model, manifest.camera, options);

        CaptureScore score{e.position, e.temperature, rmse_xyz(obs, ref, manifest.camera),
                           rmse_xyz(result.corrected, ref, manifest.camera)};
        report.captures.push_back(score);
        before.add(obs, ref, manifest.camera);
        after.add(result.corrected, ref, manifest.camera);
    }
    report.before = before.result();
    report.after = after.result();

    if (config.report_path.has_parent_path()) {
        std::filesystem::create_directories(config.report_path.parent_path());
    }
    std::ofstream out(config.report_path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write report: " + config.report_path.string());
    }
    out << report.to_json().dump(2) << '\n';
    return report;
}

}  // namespace thermacal::pipeline

#include "thermacal/thermal_sim.hpp"

#include "thermacal/error.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numbers>
#include <thread>

namespace thermacal::sim {

namespace {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Uniform in (0, 1]; never 0 so log() is safe.
double unit_uniform(std::uint64_t bits) {
    return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

// Stream key for one (capture, frame) pair; pixels are mixed in per draw.
std::uint64_t frame_key(std::uint64_t seed, double position, double temp, int frame_index) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ static_cast<std::uint64_t>(std::llround(position * 1e6)));
    h = splitmix64(h ^ static_cast<std::uint64_t>(std::llround(temp * 1e3)));
    h = splitmix64(h ^ static_cast<std::uint64_t>(frame_index));
    return h;
}

template <typename T>
T value_or(const nlohmann::json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

void RigConfig::validate() const {
    if (!(temp_min < temp_max)) {
        throw ContractError("rig: temp_min must be below temp_max");
    }
    if (!(temp_step > 0.0)) {
        throw ContractError("rig: temp_step must be positive");
    }
    if (positions.empty()) {
        throw ContractError("rig: at least one position is required");
    }
    for (double p : positions) {
        if (!(p >= 0.4 - 1e-12 && p <= 1.0 + 1e-12)) {
            throw ContractError("rig: position " + std::to_string(p) + " m outside the [0.4, 1.0] m range");
        }
    }
    if (frames_per_capture < 1 || width < 1 || height < 1) {
        throw ContractError("rig: frames and image size must be positive");
    }
}

std::vector<double> RigConfig::temperatures() const {
    const auto steps = static_cast<int>(std::floor((temp_max - temp_min) / temp_step + 1e-9));
    std::vector<double> temps;
    for (int k = 0; k <= steps; ++k) {
        temps.push_back(temp_min + k * temp_step);
    }
    return temps;
}

double DriftModel::operator()(double x, double y, double z, double t) const {
    const double dt = t - t_ref;
    return (a + b * dt + c * dt * dt) * z * z + d * x * z + e * y * z;
}

DriftModel DriftModel::zero() {
    DriftModel m;
    m.a = m.b = m.c = m.d = m.e = 0.0;
    m.noise_std = 0.0;
    return m;
}

DepthMap synth_ground_truth(double position, const CameraModel& /*cam*/, int width, int height) {
    if (!(position > 0.0)) {
        throw ContractError("synth_ground_truth: position must be positive");
    }
    return DepthMap(width, height, position);
}

DepthMap synth_ground_truth(double position, double temp, const DriftModel& drift, const CameraModel& cam,
                            int width, int height) {
    DepthMap out = synth_ground_truth(position, cam, width, height);
    const double shift = drift.rgb_drift(position, temp);
    if (shift != 0.0) {
        for (double& v : out.data()) {
            v += shift;
        }
    }
    return out;
}

DepthMap synth_observed_frame(double position, double temp, const DriftModel& drift, const CameraModel& cam,
                              int width, int height, int frame_index, std::uint64_t seed) {
    const std::uint64_t key = frame_key(seed, position, temp, frame_index);
    DepthMap out(width, height);
    for (int j = 0; j < height; ++j) {
        const double y = position * (j - cam.cy) / cam.fy;
        for (int i = 0; i < width; ++i) {
            const double x = position * (i - cam.cx) / cam.fx;
            const auto pixel = static_cast<std::uint64_t>(j) * static_cast<std::uint64_t>(width) +
                               static_cast<std::uint64_t>(i);
            const std::uint64_t h = splitmix64(key ^ splitmix64(pixel));
            if (drift.dropout > 0.0 && unit_uniform(splitmix64(h + 1)) <= drift.dropout) {
                continue;
            }
            double noise = 0.0;
            if (drift.noise_std > 0.0) {
                const double u1 = unit_uniform(splitmix64(h + 2));
                const double u2 = unit_uniform(splitmix64(h + 3));
                noise = drift.noise_std * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
            }
            out.at(i, j) = position + drift(x, y, position, temp) + noise;
        }
    }
    return out;
}

DepthMap mean_depth_map(const std::vector<DepthMap>& frames) {
    if (frames.empty()) {
        throw ContractError("mean_depth_map: no frames");
    }
    const DepthMap& first = frames.front();
    std::vector<double> sum(first.size(), 0.0);
    std::vector<int> count(first.size(), 0);
    for (const DepthMap& f : frames) {
        if (!f.same_shape(first)) {
            throw ContractError("mean_depth_map: frames differ in size");
        }
        for (std::size_t k = 0; k < f.size(); ++k) {
            if (!DepthMap::is_missing(f[k])) {
                sum[k] += f[k];
                ++count[k];
            }
        }
    }
    DepthMap out(first.width(), first.height());
    for (std::size_t k = 0; k < out.size(); ++k) {
        if (count[k] > 0) {
            out[k] = sum[k] / count[k];
        }
    }
    return out;
}

DepthMap synth_capture(const RigConfig& config, const DriftModel& drift, const CameraModel& cam, double position,
                       double temp) {
    if (config.direct_mean) {
        DriftModel reduced = drift;
        reduced.noise_std = drift.noise_std / std::sqrt(static_cast<double>(config.frames_per_capture));
        return synth_observed_frame(position, temp, reduced, cam, config.width, config.height, 0, config.rng_seed);
    }
    std::vector<DepthMap> frames;
    frames.reserve(static_cast<std::size_t>(config.frames_per_capture));
    for (int f = 0; f < config.frames_per_capture; ++f) {
        frames.push_back(
            synth_observed_frame(position, temp, drift, cam, config.width, config.height, f, config.rng_seed));
    }
    return mean_depth_map(frames);
}

std::string capture_key(double position, double temperature) {
    return "p" + std::to_string(std::llround(position * 1000.0)) + "_t" +
           std::to_string(std::llround(temperature * 10.0));
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json rig_to_json(const RigConfig& c) {
    return {{"temp_min", c.temp_min},
            {"temp_max", c.temp_max},
            {"temp_step", c.temp_step},
            {"positions", c.positions},
            {"frames_per_capture", c.frames_per_capture},
            {"width", c.width},
            {"height", c.height},
            {"rng_seed", c.rng_seed},
            {"direct_mean", c.direct_mean}};
}

RigConfig rig_from_json(const nlohmann::json& j, RigConfig c) {
    try {
        c.temp_min = value_or(j, "temp_min", c.temp_min);
        c.temp_max = value_or(j, "temp_max", c.temp_max);
        c.temp_step = value_or(j, "temp_step", c.temp_step);
        c.positions = value_or(j, "positions", c.positions);
        c.frames_per_capture = value_or(j, "frames_per_capture", c.frames_per_capture);
        c.width = value_or(j, "width", c.width);
        c.height = value_or(j, "height", c.height);
        c.rng_seed = value_or(j, "rng_seed", c.rng_seed);
        c.direct_mean = value_or(j, "direct_mean", c.direct_mean);
        c.threads = value_or(j, "threads", c.threads);
    } catch (const nlohmann::json::exception& e) {
        throw ContractError(std::string("rig config: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json drift_to_json(const DriftModel& m) {
    return {{"a", m.a},       {"b", m.b},         {"c", m.c},
            {"d", m.d},       {"e", m.e},         {"t_ref", m.t_ref},
            {"noise_std", m.noise_std}, {"dropout", m.dropout}, {"rgb_slope", m.rgb_slope}};
}

DriftModel drift_from_json(const nlohmann::json& j, DriftModel m) {
    try {
        m.a = value_or(j, "a", m.a);
        m.b = value_or(j, "b", m.b);
        m.c = value_or(j, "c", m.c);
        m.d = value_or(j, "d", m.d);
        m.e = value_or(j, "e", m.e);
        m.t_ref = value_or(j, "t_ref", m.t_ref);
        m.noise_std = value_or(j, "noise_std", m.noise_std);
        m.dropout = value_or(j, "dropout", m.dropout);
        m.rgb_slope = value_or(j, "rgb_slope", m.rgb_slope);
    } catch (const nlohmann::json::exception& e) {
        throw ContractError(std::string("drift config: ") + e.what());
    }
    if (!(m.noise_std >= 0.0) || !(m.dropout >= 0.0 && m.dropout < 1.0)) {
        throw ContractError("drift config: noise_std must be >= 0 and dropout in [0, 1)");
    }
    return m;
}

nlohmann::json Manifest::to_json() const {
    nlohmann::json list = nlohmann::json::array();
    for (const ManifestEntry& e : entries) {
        list.push_back({{"position", e.position}, {"temperature", e.temperature}, {"obs", e.obs}, {"gt", e.gt}});
    }
    return {{"version", version},
            {"seed", seed},
            {"config", rig_to_json(config)},
            {"drift", drift_to_json(drift)},
            {"camera", camera_to_json(camera)},
            {"entries", list}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
    Manifest m;
    try {
        m.version = j.at("version").get<int>();
        if (m.version != 1) {
            throw ContractError("manifest: unsupported version " + std::to_string(m.version));
        }
        m.seed = j.at("seed").get<std::uint64_t>();
        m.config = rig_from_json(j.at("config"));
        m.drift = drift_from_json(j.at("drift"));
        m.camera = camera_from_json(j.at("camera"));
        for (const auto& e : j.at("entries")) {
            m.entries.push_back({e.at("position").get<double>(), e.at("temperature").get<double>(),
                                 e.at("obs").get<std::string>(), e.at("gt").get<std::string>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ContractError(std::string("manifest: ") + e.what());
    }
    return m;
}

const ManifestEntry* Manifest::find(double position, double temperature) const {
    for (const ManifestEntry& e : entries) {
        if (std::abs(e.position - position) < 5e-4 && std::abs(e.temperature - temperature) < 5e-2) {
            return &e;
        }
    }
    return nullptr;
}

Manifest generate_dataset(const RigConfig& config, const DriftModel& drift_in, const CameraModel& cam,
                          const std::filesystem::path& out_dir) {
    config.validate();
    cam.validate();
    DriftModel drift = drift_in;
    drift.t_ref = config.temp_min;

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) {
        throw IoError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());
    }

    Manifest manifest;
    manifest.seed = config.rng_seed;
    manifest.config = config;
    manifest.drift = drift;
    manifest.camera = cam;
    for (double p : config.positions) {
        for (double t : config.temperatures()) {
            const std::string key = capture_key(p, t);
            manifest.entries.push_back({p, t, key + "_obs.pfm", key + "_gt.pfm"});
        }
    }

    // Captures are independent; each worker writes its own files.
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&]() {
        for (std::size_t k = next++; k < manifest.entries.size(); k = next++) {
            try {
                const ManifestEntry& e = manifest.entries[k];
                write_pfm(synth_capture(config, drift, cam, e.position, e.temperature), out_dir / e.obs);
                write_pfm(synth_ground_truth(e.position, e.temperature, drift, cam, config.width, config.height),
                          out_dir / e.gt);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
            }
        }
    };
    const int threads = std::max(1, config.threads);
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back(worker);
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }

    const auto manifest_path = out_dir / "manifest.json";
    std::ofstream out(manifest_path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + manifest_path.string());
    }
    out << manifest.to_json().dump(2) << '\n';
    if (!out) {
        throw IoError("failed writing " + manifest_path.string());
    }
    return manifest;
}

Manifest load_manifest(const std::filesystem::path& dataset_dir) {
    const auto path = dataset_dir / "manifest.json";
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open manifest: " + path.string());
    }
    try {
        return Manifest::from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ContractError(path.string() + ": " + e.what());
    }
}

}  // namespace thermacal::sim

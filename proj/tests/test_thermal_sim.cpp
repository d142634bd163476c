#include "thermacal/error.hpp"
#include "thermacal/geometry.hpp"
#include "thermacal/thermal_sim.hpp"

#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

using namespace thermacal;
using namespace thermacal::sim;

namespace {

std::vector<unsigned char> file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("thermacal_test_sim_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

RigConfig desk_rig() {
    RigConfig c;
    c.temp_min = 10.0;
    c.temp_max = 35.0;
    c.temp_step = 5.0;
    c.positions = {0.4, 0.6, 0.8};
    c.frames_per_capture = 8;
    c.width = 160;
    c.height = 120;
    c.rng_seed = 5;
    return c;
}

/// Mean absolute observed-minus-truth error over valid pixels.
double mean_error(const DepthMap& obs, double position) {
    double sum = 0.0;
    std::size_t n = 0;
    for (double v : obs.data()) {
        if (!DepthMap::is_missing(v)) {
            sum += v - position;
            ++n;
        }
    }
    return sum / static_cast<double>(n);
}

}  // namespace

TEST_CASE("ground truth is a fronto-parallel plane") {
    const CameraModel cam = CameraModel::default_for(64, 48);
    const DepthMap gt = synth_ground_truth(0.4, cam, 64, 48);
    CHECK(gt.valid_count() == gt.size());
    for (double v : gt.data()) {
        CHECK(v == 0.4);
    }
    DriftModel drift;
    drift.rgb_slope = 1e-3;
    const DepthMap shifted = synth_ground_truth(0.5, 20.0, drift, cam, 64, 48);
    CHECK(shifted.at(3, 7) == doctest::Approx(0.5 + 1e-3 * 10.0 * 0.5).epsilon(1e-15));
    CHECK_THROWS_AS(synth_ground_truth(0.0, cam, 4, 4), ContractError);
}

TEST_CASE("drift polynomial") {
    const DriftModel d;
    CHECK(d(0.1, -0.2, 0.7, d.t_ref) == doctest::Approx(d.d * 0.1 * 0.7 + d.e * -0.2 * 0.7).epsilon(1e-15));
    CHECK(d(0.0, 0.0, 0.5, 20.0) == doctest::Approx((4e-4 * 10.0 + 6e-5 * 100.0) * 0.25).epsilon(1e-15));

    // Grows with temperature above the reference and with distance.
    double previous = 0.0;
    for (double t = 11.0; t <= 35.0; t += 1.0) {
        const double v = d(0.0, 0.0, 0.6, t);
        CHECK(v > previous);
        previous = v;
    }
    previous = 0.0;
    for (double z = 0.4; z <= 1.0; z += 0.1) {
        const double v = d(0.0, 0.0, z, 25.0);
        CHECK(v > previous);
        previous = v;
    }
    const DriftModel z = DriftModel::zero();
    CHECK(z(0.3, 0.3, 0.9, 35.0) == 0.0);
    CHECK(z.noise_std == 0.0);
}

TEST_CASE("observed frames") {
    const int w = 80;
    const int h = 60;
    const CameraModel cam = CameraModel::default_for(w, h);

    SUBCASE("noise-free, drift-free frames equal the truth except dropouts") {
        const DepthMap f = synth_observed_frame(0.7, 20.0, DriftModel::zero(), cam, w, h, 0, 1);
        const DepthMap gt = synth_ground_truth(0.7, cam, w, h);
        CHECK(f.valid_count() < f.size());
        CHECK(f.valid_count() > f.size() * 98 / 100);
        for (std::size_t k = 0; k < f.size(); ++k) {
            if (!DepthMap::is_missing(f[k])) {
                CHECK(f[k] == gt[k]);
            }
        }
    }
    SUBCASE("at the reference temperature only the lateral terms remain") {
        DriftModel d;
        d.noise_std = 0.0;
        d.dropout = 0.0;
        const DepthMap f = synth_observed_frame(0.5, d.t_ref, d, cam, w, h, 0, 1);
        for (int j = 0; j < h; j += 7) {
            for (int i = 0; i < w; i += 5) {
                const double x = 0.5 * (i - cam.cx) / cam.fx;
                const double y = 0.5 * (j - cam.cy) / cam.fy;
                CHECK(f.at(i, j) == doctest::Approx(0.5 + d.d * x * 0.5 + d.e * y * 0.5).epsilon(1e-14));
            }
        }
    }
    SUBCASE("frames are reproducible and keyed on their arguments") {
        const DriftModel d;
        const DepthMap a = synth_observed_frame(0.6, 12.0, d, cam, w, h, 3, 99);
        const DepthMap b = synth_observed_frame(0.6, 12.0, d, cam, w, h, 3, 99);
        CHECK(encode_pfm(a) == encode_pfm(b));
        CHECK(encode_pfm(a) != encode_pfm(synth_observed_frame(0.6, 12.0, d, cam, w, h, 4, 99)));
        CHECK(encode_pfm(a) != encode_pfm(synth_observed_frame(0.6, 12.0, d, cam, w, h, 3, 98)));
        CHECK(encode_pfm(a) != encode_pfm(synth_observed_frame(0.6, 13.0, d, cam, w, h, 3, 99)));
    }
    SUBCASE("observed error grows with temperature and distance") {
        DriftModel d;
        d.t_ref = 10.0;
        double previous = -1.0;
        for (double t : {10.0, 15.0, 20.0, 25.0, 30.0, 35.0}) {
            const double e = mean_error(synth_observed_frame(0.6, t, d, cam, w, h, 0, 7), 0.6);
            CHECK(e > previous);
            previous = e;
        }
        previous = -1.0;
        for (double p : {0.4, 0.55, 0.7, 0.85, 1.0}) {
            const double e = mean_error(synth_observed_frame(p, 30.0, d, cam, w, h, 0, 7), p);
            CHECK(e > previous);
            previous = e;
        }
    }
}

TEST_CASE("frame averaging") {
    const DepthMap one(2, 1, std::vector<double>{0.5, DepthMap::kMissing});
    const DepthMap same = mean_depth_map({one});
    CHECK(same.at(0, 0) == 0.5);
    CHECK(same.missing(1, 0));

    const DepthMap a(1, 1, std::vector<double>{1.0});
    const DepthMap b(1, 1, std::vector<double>{3.0});
    const DepthMap hole(1, 1);
    CHECK(mean_depth_map({a, b}).at(0, 0) == 2.0);
    CHECK(mean_depth_map({a, hole, b}).at(0, 0) == 2.0);
    CHECK(mean_depth_map({hole, hole}).missing(0, 0));
    CHECK_THROWS_AS(mean_depth_map({}), ContractError);
    CHECK_THROWS_AS(mean_depth_map({a, DepthMap(2, 1, 1.0)}), ContractError);
}

TEST_CASE("averaged noise obeys the central limit bound") {
    // 50 frames at 1.5 mm: the mean stays within 3 sigma / sqrt(50) of the
    // truth for 99.7% of pixels.
    const int w = 640;
    const int h = 480;
    const CameraModel cam = CameraModel::default_for(w, h);
    DriftModel d = DriftModel::zero();
    d.noise_std = 1.5e-3;
    d.dropout = 0.0;
    RigConfig rig;
    rig.frames_per_capture = 50;
    rig.width = w;
    rig.height = h;
    const DepthMap mean = synth_capture(rig, d, cam, 0.6, 20.0);
    const double bound = 3.0 * 1.5e-3 / std::sqrt(50.0);
    std::size_t inside = 0;
    for (double v : mean.data()) {
        inside += std::abs(v - 0.6) <= bound ? 1 : 0;
    }
    CHECK(static_cast<double>(inside) / static_cast<double>(mean.size()) >= 0.997);

    // The direct-mean shortcut draws one frame at the reduced noise level.
    rig.direct_mean = true;
    const DepthMap direct = synth_capture(rig, d, cam, 0.6, 20.0);
    double sq = 0.0;
    for (double v : direct.data()) {
        sq += (v - 0.6) * (v - 0.6);
    }
    CHECK(std::sqrt(sq / static_cast<double>(direct.size())) == doctest::Approx(1.5e-3 / std::sqrt(50.0)).epsilon(0.02));
}

TEST_CASE("rig configuration") {
    const RigConfig def;
    CHECK(def.temperatures().size() == 26);
    CHECK(def.temperatures().size() * def.positions.size() == 156);
    CHECK(desk_rig().temperatures() == std::vector<double>{10.0, 15.0, 20.0, 25.0, 30.0, 35.0});

    RigConfig bad = def;
    bad.positions = {0.3};
    CHECK_THROWS_AS(bad.validate(), ContractError);
    bad = def;
    bad.temp_max = bad.temp_min;
    CHECK_THROWS_AS(bad.validate(), ContractError);
    bad = def;
    bad.temp_step = 0.0;
    CHECK_THROWS_AS(bad.validate(), ContractError);

    const RigConfig back = rig_from_json(rig_to_json(desk_rig()));
    CHECK(back.positions == desk_rig().positions);
    CHECK(back.width == 160);
    CHECK(back.rng_seed == 5);
    CHECK_THROWS_AS(drift_from_json(nlohmann::json{{"dropout", 1.5}}), ContractError);
    CHECK(drift_from_json(drift_to_json(DriftModel{})).c == DriftModel{}.c);
}

TEST_CASE("capture keys and manifest lookup") {
    CHECK(capture_key(0.6, 12.0) == "p600_t120");
    CHECK(capture_key(0.55, 35.0) == "p550_t350");
    Manifest m;
    m.entries = {{0.4, 10.0, "a", "b"}, {0.6, 12.0, "c", "d"}};
    REQUIRE(m.find(0.6, 12.0) != nullptr);
    CHECK(m.find(0.6, 12.0)->obs == "c");
    CHECK(m.find(0.6001, 12.01) != nullptr);
    CHECK(m.find(0.61, 12.0) == nullptr);
    CHECK(m.find(0.6, 13.0) == nullptr);
}

TEST_CASE("desk-scale dataset generation") {
    const RigConfig rig = desk_rig();
    const CameraModel cam = CameraModel::default_for(rig.width, rig.height);
    const auto dir_a = scratch("a");
    const auto dir_b = scratch("b");

    const auto start = std::chrono::steady_clock::now();
    const Manifest a = generate_dataset(rig, DriftModel{}, cam, dir_a);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    CHECK(a.entries.size() == 18);
    CHECK(seconds < 10.0);

    RigConfig threaded = rig;
    threaded.threads = 3;
    generate_dataset(threaded, DriftModel{}, cam, dir_b);

    CHECK(file_bytes(dir_a / "manifest.json") == file_bytes(dir_b / "manifest.json"));
    for (const ManifestEntry& e : a.entries) {
        CHECK(file_bytes(dir_a / e.obs) == file_bytes(dir_b / e.obs));
        CHECK(file_bytes(dir_a / e.gt) == file_bytes(dir_b / e.gt));
    }

    const Manifest loaded = load_manifest(dir_a);
    CHECK(loaded.entries.size() == 18);
    CHECK(loaded.seed == 5);
    CHECK(loaded.drift.t_ref == 10.0);
    CHECK(loaded.camera.fx == cam.fx);
    CHECK(loaded.to_json() == a.to_json());
    // Position-major, then ascending temperature.
    CHECK(loaded.entries[0].position == 0.4);
    CHECK(loaded.entries[1].temperature == 15.0);
    CHECK(loaded.entries[6].position == 0.6);

    const DepthMap obs = read_pfm(dir_a / a.find(0.8, 35.0)->obs);
    CHECK(obs.width() == 160);
    CHECK(obs.height() == 120);
    CHECK(mean_error(obs, 0.8) > 0.0);

    RigConfig reseeded = rig;
    reseeded.rng_seed = 6;
    const auto dir_c = scratch("c");
    generate_dataset(reseeded, DriftModel{}, cam, dir_c);
    CHECK(file_bytes(dir_a / a.entries[3].obs) != file_bytes(dir_c / a.entries[3].obs));

    for (const auto& d : {dir_a, dir_b, dir_c}) {
        std::filesystem::remove_all(d);
    }
    CHECK_THROWS_AS(load_manifest(dir_a), IoError);
}

TEST_CASE("grid sampling at full rig scale yields about five thousand samples") {
    // Default rig (6 positions, 10 to 35 degrees), training temperatures on a
    // 3-degree stride plus the last one, assembled in memory.
    RigConfig rig;
    rig.direct_mean = true;
    const CameraModel cam = CameraModel::default_for(rig.width, rig.height);
    DriftModel drift;
    drift.t_ref = rig.temp_min;

    GridSpec grid;
    grid.origin[3] = rig.temp_min - 0.5 * grid.cell[3];
    GridAccumulator acc(grid);
    for (double p : rig.positions) {
        const DepthMap ref = synth_ground_truth(p, cam, rig.width, rig.height);
        for (double t : rig.temperatures()) {
            const double k = (t - rig.temp_min) / 3.0;
            if (std::abs(k - std::round(k)) > 1e-9 && t != rig.temp_max) {
                continue;
            }
            const DepthMap obs = synth_capture(rig, drift, cam, p, t);
            const Features f = build_features(obs, t, cam);
            Eigen::VectorXd y(f.size());
            for (Eigen::Index r = 0; r < f.size(); ++r) {
                const int i = f.pixel_index(r, 0);
                const int j = f.pixel_index(r, 1);
                y[r] = ref.at(i, j) - obs.at(i, j);
            }
            acc.add(f.X, y);
        }
    }
    const auto n = acc.cell_count();
    MESSAGE("grid samples: " << n);
    CHECK(n >= 4000);
    CHECK(n <= 6000);
}

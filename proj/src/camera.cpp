#include "thermacal/camera.hpp"

#include "thermacal/error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>

namespace thermacal {

Eigen::Matrix3d CameraModel::K() const {
    Eigen::Matrix3d k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
}

Eigen::Matrix3d CameraModel::K_inverse() const {
    Eigen::Matrix3d k;
    k << 1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0;
    return k;
}

void CameraModel::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy)) {
        throw ContractError("camera: focal lengths must be positive");
    }
    if (!std::isfinite(cx) || !std::isfinite(cy)) {
        throw ContractError("camera: principal point must be finite");
    }
    if (extrinsics) {
        const Eigen::Matrix3d& R = extrinsics->R;
        const double ortho = (R * R.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
        if (!(ortho <= 1e-9) || !(std::abs(R.determinant() - 1.0) <= 1e-9)) {
            throw ContractError("camera: R must be a rotation (orthonormal, det +1)");
        }
        if (!extrinsics->t.allFinite()) {
            throw ContractError("camera: t must be finite");
        }
    }
}

CameraModel CameraModel::default_for(int width, int height) {
    const double scale = static_cast<double>(width) / 640.0;
    CameraModel cam;
    cam.fx = 570.0 * scale;
    cam.fy = 570.0 * scale;
    cam.cx = 0.5 * (width - 1);
    cam.cy = 0.5 * (height - 1);
    return cam;
}

Eigen::Vector3d reproject(double i, double j, double d, const CameraModel& cam) {
    if (!(d > 0.0) || !std::isfinite(d)) {
        throw DomainError("reproject: depth must be positive and finite");
    }
    return {d * (i - cam.cx) / cam.fx, d * (j - cam.cy) / cam.fy, d};
}

PixelDepth project(const Eigen::Vector3d& point, const CameraModel& cam) {
    if (!(point.z() > 0.0)) {
        throw DomainError("project: point must lie in front of the camera");
    }
    return {cam.fx * point.x() / point.z() + cam.cx, cam.fy * point.y() / point.z() + cam.cy, point.z()};
}

nlohmann::json camera_to_json(const CameraModel& cam) {
    nlohmann::json j = {{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx}, {"cy", cam.cy}};
    if (cam.extrinsics) {
        std::vector<double> R;
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                R.push_back(cam.extrinsics->R(r, c));
            }
        }
        j["R"] = R;
        j["t"] = {cam.extrinsics->t.x(), cam.extrinsics->t.y(), cam.extrinsics->t.z()};
    }
    return j;
}

CameraModel camera_from_json(const nlohmann::json& j) {
    CameraModel cam;
    try {
        cam.fx = j.at("fx").get<double>();
        cam.fy = j.at("fy").get<double>();
        cam.cx = j.at("cx").get<double>();
        cam.cy = j.at("cy").get<double>();
        if (j.contains("R") || j.contains("t")) {
            const auto R = j.at("R").get<std::vector<double>>();
            const auto t = j.at("t").get<std::vector<double>>();
            if (R.size() != 9 || t.size() != 3) {
                throw ContractError("camera: R needs 9 numbers and t needs 3");
            }
            Extrinsics ext;
            for (int r = 0; r < 3; ++r) {
                for (int c = 0; c < 3; ++c) {
                    ext.R(r, c) = R[static_cast<std::size_t>(3 * r + c)];
                }
                ext.t[r] = t[static_cast<std::size_t>(r)];
            }
            cam.extrinsics = ext;
        }
    } catch (const nlohmann::json::exception& e) {
        throw ContractError(std::string("camera JSON: ") + e.what());
    }
    cam.validate();
    return cam;
}

CameraModel load_camera(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open camera file: " + path.string());
    }
    try {
        return camera_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ContractError(path.string() + ": " + e.what());
    }
}

void save_camera(const CameraModel& cam, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out << camera_to_json(cam).dump(2) << '\n';
}

}  // namespace thermacal

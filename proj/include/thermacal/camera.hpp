#pragma once

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>

namespace thermacal {

/// Rigid transform into a partner camera's frame: x' = R x + t.
struct Extrinsics {
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();
};

/// Undistorted pinhole intrinsics, optionally with extrinsics to a partner camera.
struct CameraModel {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    std::optional<Extrinsics> extrinsics;

    Eigen::Matrix3d K() const;
    Eigen::Matrix3d K_inverse() const;

    /// fx, fy > 0 and finite; R orthonormal with det +1 within 1e-9.
    void validate() const;

    /// Intrinsics of a 640x480 structured-light sensor, rescaled to the
    /// requested resolution.
    static CameraModel default_for(int width, int height);
};

/// Pixel plus depth: pixel coordinates (i, j) and depth along the optical axis.
struct PixelDepth {
    double i = 0.0;
    double j = 0.0;
    double depth = 0.0;
};

/// d * K^-1 [i, j, 1]^T. The third component equals d exactly.
Eigen::Vector3d reproject(double i, double j, double d, const CameraModel& cam);

/// Inverse of reproject for points in front of the camera.
PixelDepth project(const Eigen::Vector3d& point, const CameraModel& cam);

nlohmann::json camera_to_json(const CameraModel& cam);
CameraModel camera_from_json(const nlohmann::json& j);
CameraModel load_camera(const std::filesystem::path& path);
void save_camera(const CameraModel& cam, const std::filesystem::path& path);

}  // namespace thermacal

#pragma once

#include "thermacal/camera.hpp"
#include "thermacal/depth_map.hpp"
#include "thermacal/gp.hpp"

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>

namespace thermacal {

/// Warps a depth map into the partner camera's pixel grid. `ir_cam` must carry
/// extrinsics. Target pixels are the rounded dehomogenised projections;
/// collisions keep the smallest depth and unhit pixels stay missing.
DepthMap align_depth_to_rgb(const DepthMap& depth, const CameraModel& ir_cam, const CameraModel& rgb_cam,
                            int out_width, int out_height);
DepthMap align_depth_to_rgb(const DepthMap& depth, const CameraModel& ir_cam, const CameraModel& rgb_cam);

/// Feature rows for every non-missing pixel, in row-major scan order.
struct Features {
    gp::FeatureMatrix X;
    /// (i, j) of the pixel each row came from.
    Eigen::Matrix<int, Eigen::Dynamic, 2> pixel_index;

    Eigen::Index size() const { return X.rows(); }
};

Features build_features(const DepthMap& depth, double temp, const CameraModel& cam);

/// gt - obs per pixel; missing where either side is missing.
DepthMap build_targets(const DepthMap& gt, const DepthMap& obs);

/// Regular 4D grid over (x, y, z, t). Cell k along dimension d spans
/// [origin[d] + k * cell[d], origin[d] + (k + 1) * cell[d]).
struct GridSpec {
    Eigen::Vector4d cell{0.076, 0.076, 0.1, 3.0};
    Eigen::Vector4d origin{0.0, 0.0, 0.05, -1.5};

    void validate() const;
};

/// One training pair per occupied cell: the mean feature and mean target of
/// the samples inside it. Output rows are sorted by cell index.
gp::TrainingSet grid_sample(const gp::FeatureMatrix& features, const Eigen::VectorXd& targets,
                            const GridSpec& grid);

/// Streaming version of grid_sample for data that arrives capture by capture.
class GridAccumulator {
public:
    explicit GridAccumulator(GridSpec grid);
    void add(const gp::FeatureMatrix& features, const Eigen::VectorXd& targets);
    std::size_t cell_count() const { return cells_.size(); }
    gp::TrainingSet finish() const;

private:
    struct Cell {
        Eigen::Vector4d feature_sum = Eigen::Vector4d::Zero();
        double target_sum = 0.0;
        std::size_t count = 0;
    };

    GridSpec grid_;
    std::map<std::array<std::int64_t, 4>, Cell> cells_;
};

struct CorrectionOptions {
    /// Query pixels per prediction call.
    Eigen::Index chunk = 4096;
    /// Posterior variance costs O(N^2) per pixel; off leaves confidence missing.
    bool with_variance = true;
    /// Worker threads over chunks; outputs are merged by pixel index.
    int threads = 1;
};

struct CorrectionResult {
    DepthMap corrected;
    DepthMap delta;
    /// Posterior variance per pixel (meters^2).
    DepthMap confidence;
};

/// D*(i, j) = D(i, j) + Delta(i, j) with Delta the GP posterior mean at the
/// pixel's (x, y, z, t) feature. Missing pixels stay missing in all outputs.
CorrectionResult correct_depth(const DepthMap& depth, double temp, const gp::FittedGP& gp,
                               const CameraModel& cam, const CorrectionOptions& options = {});

/// Per-axis RMSE in millimeters.
struct RmseXyz {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

/// Sums squared per-axis differences so several map pairs can be pooled.
class RmseAccumulator {
public:
    void add(const DepthMap& a, const DepthMap& b, const CameraModel& cam);
    std::size_t count() const { return count_; }
    /// Throws ContractError when nothing overlapped.
    RmseXyz result() const;

private:
    double sx_ = 0.0;
    double sy_ = 0.0;
    double sz_ = 0.0;
    std::size_t count_ = 0;
};

RmseXyz rmse_xyz(const DepthMap& a, const DepthMap& b, const CameraModel& cam);

}  // namespace thermacal

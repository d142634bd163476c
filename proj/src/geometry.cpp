#include "thermacal/geometry.hpp"

#include "thermacal/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>
#include <thread>
#include <vector>

namespace thermacal {

DepthMap align_depth_to_rgb(const DepthMap& depth, const CameraModel& ir_cam, const CameraModel& rgb_cam,
                            int out_width, int out_height) {
    if (!ir_cam.extrinsics) {
        throw ContractError("align_depth_to_rgb: IR camera carries no extrinsics to the RGB camera");
    }
    ir_cam.validate();
    rgb_cam.validate();
    const Eigen::Matrix3d KR = rgb_cam.K() * ir_cam.extrinsics->R;
    const Eigen::Vector3d Kt = rgb_cam.K() * ir_cam.extrinsics->t;

    DepthMap out(out_width, out_height);
    for (int j = 0; j < depth.height(); ++j) {
        for (int i = 0; i < depth.width(); ++i) {
            const double d = depth.at(i, j);
            if (DepthMap::is_missing(d) || !(d > 0.0)) {
                continue;
            }
            const Eigen::Vector3d h = KR * reproject(i, j, d, ir_cam) + Kt;
            if (!(h.z() > 0.0)) {
                continue;
            }
            const double u = std::round(h.x() / h.z());
            const double v = std::round(h.y() / h.z());
            if (u < 0.0 || v < 0.0 || u >= out_width || v >= out_height) {
                continue;
            }
            double& target = out.at(static_cast<int>(u), static_cast<int>(v));
            if (DepthMap::is_missing(target) || h.z() < target) {
                target = h.z();
            }
        }
    }
    return out;
}

DepthMap align_depth_to_rgb(const DepthMap& depth, const CameraModel& ir_cam, const CameraModel& rgb_cam) {
    return align_depth_to_rgb(depth, ir_cam, rgb_cam, depth.width(), depth.height());
}

Features build_features(const DepthMap& depth, double temp, const CameraModel& cam) {
    if (!std::isfinite(temp)) {
        throw DomainError("build_features: temperature must be finite");
    }
    const auto m = static_cast<Eigen::Index>(depth.valid_count());
    Features f;
    f.X.resize(m, gp::kFeatureDim);
    f.pixel_index.resize(m, 2);
    Eigen::Index row = 0;
    for (int j = 0; j < depth.height(); ++j) {
        for (int i = 0; i < depth.width(); ++i) {
            const double d = depth.at(i, j);
            if (DepthMap::is_missing(d)) {
                continue;
            }
            const Eigen::Vector3d p = reproject(i, j, d, cam);
            f.X.row(row) << p.x(), p.y(), p.z(), temp;
            f.pixel_index.row(row) << i, j;
            ++row;
        }
    }
    return f;
}

DepthMap build_targets(const DepthMap& gt, const DepthMap& obs) {
    if (!gt.same_shape(obs)) {
        throw ContractError("build_targets: ground truth and observation differ in size");
    }
    DepthMap out(gt.width(), gt.height());
    for (std::size_t k = 0; k < gt.size(); ++k) {
        if (!DepthMap::is_missing(gt[k]) && !DepthMap::is_missing(obs[k])) {
            out[k] = gt[k] - obs[k];
        }
    }
    return out;
}

void GridSpec::validate() const {
    for (int d = 0; d < 4; ++d) {
        if (!(cell[d] > 0.0) || !std::isfinite(cell[d]) || !std::isfinite(origin[d])) {
            throw ContractError("grid: cell sizes must be positive and finite");
        }
    }
}

GridAccumulator::GridAccumulator(GridSpec grid) : grid_(std::move(grid)) { grid_.validate(); }

void GridAccumulator::add(const gp::FeatureMatrix& features, const Eigen::VectorXd& targets) {
    if (features.rows() != targets.size()) {
        throw ContractError("grid_sample: feature and target counts differ");
    }
    for (Eigen::Index r = 0; r < features.rows(); ++r) {
        std::array<std::int64_t, 4> key{};
        for (int d = 0; d < 4; ++d) {
            key[d] = static_cast<std::int64_t>(std::floor((features(r, d) - grid_.origin[d]) / grid_.cell[d]));
        }
        Cell& c = cells_[key];
        c.feature_sum += features.row(r).transpose();
        c.target_sum += targets[r];
        ++c.count;
    }
}

gp::TrainingSet GridAccumulator::finish() const {
    gp::TrainingSet out;
    out.X.resize(static_cast<Eigen::Index>(cells_.size()), gp::kFeatureDim);
    out.y.resize(static_cast<Eigen::Index>(cells_.size()));
    Eigen::Index row = 0;
    for (const auto& [key, cell] : cells_) {
        const double n = static_cast<double>(cell.count);
        out.X.row(row) = (cell.feature_sum / n).transpose();
        out.y[row] = cell.target_sum / n;
        ++row;
    }
    return out;
}

gp::TrainingSet grid_sample(const gp::FeatureMatrix& features, const Eigen::VectorXd& targets,
                            const GridSpec& grid) {
    GridAccumulator acc(grid);
    acc.add(features, targets);
    return acc.finish();
}

CorrectionResult correct_depth(const DepthMap& depth, double temp, const gp::FittedGP& gp,
                               const CameraModel& cam, const CorrectionOptions& options) {
    if (options.chunk < 1) {
        throw ContractError("correct_depth: chunk must be at least 1");
    }
    if (gp.size() == 0) {
        throw ContractError("correct_depth: model has no training points");
    }
    cam.validate();
    const Features f = build_features(depth, temp, cam);
    const Eigen::Index m = f.size();

    Eigen::VectorXd delta(m);
    Eigen::VectorXd variance = options.with_variance ? Eigen::VectorXd(m) : Eigen::VectorXd();
    const Eigen::Index chunks = (m + options.chunk - 1) / options.chunk;

    std::atomic<Eigen::Index> next{0};
    auto worker = [&]() {
        for (Eigen::Index c = next++; c < chunks; c = next++) {
            const Eigen::Index start = c * options.chunk;
            const Eigen::Index count = std::min(options.chunk, m - start);
            const gp::Prediction p = gp::predict(gp, f.X.middleRows(start, count), options.with_variance);
            delta.segment(start, count) = p.mean;
            if (options.with_variance) {
                variance.segment(start, count) = p.variance;
            }
        }
    };
    const int threads = std::max(1, std::min<int>(options.threads, static_cast<int>(chunks)));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back(worker);
        }
    }

    CorrectionResult out{DepthMap(depth.width(), depth.height()), DepthMap(depth.width(), depth.height()),
                         DepthMap(depth.width(), depth.height())};
    for (Eigen::Index r = 0; r < m; ++r) {
        const int i = f.pixel_index(r, 0);
        const int j = f.pixel_index(r, 1);
        out.delta.at(i, j) = delta[r];
        out.corrected.at(i, j) = depth.at(i, j) + delta[r];
        if (options.with_variance) {
            out.confidence.at(i, j) = variance[r];
        }
    }
    return out;
}

void RmseAccumulator::add(const DepthMap& a, const DepthMap& b, const CameraModel& cam) {
    if (!a.same_shape(b)) {
        throw ContractError("rmse_xyz: depth maps differ in size");
    }
    for (int j = 0; j < a.height(); ++j) {
        for (int i = 0; i < a.width(); ++i) {
            const double da = a.at(i, j);
            const double db = b.at(i, j);
            if (DepthMap::is_missing(da) || DepthMap::is_missing(db)) {
                continue;
            }
            const Eigen::Vector3d diff = reproject(i, j, da, cam) - reproject(i, j, db, cam);
            sx_ += diff.x() * diff.x();
            sy_ += diff.y() * diff.y();
            sz_ += diff.z() * diff.z();
            ++count_;
        }
    }
}

RmseXyz RmseAccumulator::result() const {
    if (count_ == 0) {
        throw ContractError("rmse_xyz: no pixel is valid in both maps; metric undefined");
    }
    const double n = static_cast<double>(count_);
    return {1000.0 * std::sqrt(sx_ / n), 1000.0 * std::sqrt(sy_ / n), 1000.0 * std::sqrt(sz_ / n)};
}

RmseXyz rmse_xyz(const DepthMap& a, const DepthMap& b, const CameraModel& cam) {
    RmseAccumulator acc;
    acc.add(a, b, cam);
    return acc.result();
}

}  // namespace thermacal

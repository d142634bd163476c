#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <vector>

namespace thermacal {

/// Dense row-major H x W grid of doubles with NaN as the missing sentinel.
///
/// Pixel (i, j) is column i, row j, matching the homogeneous pixel
/// [i, j, 1]^T used for reprojection. The same type carries depth (meters),
/// depth deltas (meters) and per-pixel variances (meters^2).
class DepthMap {
public:
    static constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
    /// Valid depths lie in (0, kMaxDepth).
    static constexpr double kMaxDepth = 100.0;

    DepthMap() = default;
    DepthMap(int width, int height, double fill = kMissing);
    DepthMap(int width, int height, std::vector<double> data);

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return data_.size(); }
    bool same_shape(const DepthMap& other) const {
        return width_ == other.width_ && height_ == other.height_;
    }

    double& at(int i, int j) { return data_[index(i, j)]; }
    double at(int i, int j) const { return data_[index(i, j)]; }
    double& operator[](std::size_t k) { return data_[k]; }
    double operator[](std::size_t k) const { return data_[k]; }

    static bool is_missing(double v) { return std::isnan(v); }
    bool missing(int i, int j) const { return is_missing(at(i, j)); }
    std::size_t valid_count() const;

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    /// Throws DomainError unless every non-missing value is in (0, kMaxDepth).
    void validate_depth() const;

private:
    std::size_t index(int i, int j) const {
        return static_cast<std::size_t>(j) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(i);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

/// Grayscale Portable Float Map ("Pf"), written little-endian (scale -1).
/// Rows are stored bottom-to-top as the format prescribes.
void write_pfm(const DepthMap& map, const std::filesystem::path& path);
DepthMap read_pfm(const std::filesystem::path& path);

std::vector<unsigned char> encode_pfm(const DepthMap& map);
DepthMap decode_pfm(const std::vector<unsigned char>& bytes);

}  // namespace thermacal

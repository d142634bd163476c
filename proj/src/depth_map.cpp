#include "thermacal/depth_map.hpp"

#include "thermacal/error.hpp"

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

namespace thermacal {

DepthMap::DepthMap(int width, int height, double fill) : width_(width), height_(height) {
    if (width < 0 || height < 0) {
        throw ContractError("DepthMap: negative dimensions");
    }
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

DepthMap::DepthMap(int width, int height, std::vector<double> data)
    : width_(width), height_(height), data_(std::move(data)) {
    if (width < 0 || height < 0 ||
        data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw ContractError("DepthMap: data length does not match width * height");
    }
}

std::size_t DepthMap::valid_count() const {
    std::size_t n = 0;
    for (double v : data_) {
        n += is_missing(v) ? 0 : 1;
    }
    return n;
}

void DepthMap::validate_depth() const {
    for (std::size_t k = 0; k < data_.size(); ++k) {
        const double v = data_[k];
        if (is_missing(v)) {
            continue;
        }
        if (!(v > 0.0 && v < kMaxDepth)) {
            throw DomainError("depth map: value " + std::to_string(v) + " at index " + std::to_string(k) +
                              " outside (0, 100) m");
        }
    }
}

std::vector<unsigned char> encode_pfm(const DepthMap& map) {
    char header[64];
    const int len = std::snprintf(header, sizeof(header), "Pf\n%d %d\n-1.0\n", map.width(), map.height());
    std::vector<unsigned char> out(header, header + len);
    out.reserve(out.size() + 4 * map.size());
    for (int j = map.height() - 1; j >= 0; --j) {
        for (int i = 0; i < map.width(); ++i) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(map.at(i, j)));
            for (int b = 0; b < 4; ++b) {
                out.push_back(static_cast<unsigned char>((bits >> (8 * b)) & 0xFFu));
            }
        }
    }
    return out;
}

DepthMap decode_pfm(const std::vector<unsigned char>& bytes) {
    // Header: three whitespace-separated tokens after the magic, then exactly
    // one whitespace byte before the raster.
    std::size_t pos = 0;
    auto next_token = [&]() {
        while (pos < bytes.size() && std::isspace(bytes[pos])) {
            ++pos;
        }
        std::string tok;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) {
            tok.push_back(static_cast<char>(bytes[pos++]));
        }
        return tok;
    };
    const std::string magic = next_token();
    if (magic != "Pf") {
        throw IoError(magic == "PF" ? "PFM: colour maps are not supported" : "PFM: bad magic");
    }
    int width = 0;
    int height = 0;
    double scale = 0.0;
    try {
        width = std::stoi(next_token());
        height = std::stoi(next_token());
        scale = std::stod(next_token());
    } catch (const std::exception&) {
        throw IoError("PFM: malformed header");
    }
    if (width <= 0 || height <= 0 || scale == 0.0 || pos >= bytes.size()) {
        throw IoError("PFM: malformed header");
    }
    ++pos;  // single whitespace terminator
    const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    if (bytes.size() - pos != 4 * count) {
        throw IoError("PFM: raster size does not match " + std::to_string(width) + "x" + std::to_string(height));
    }
    const bool little = scale < 0.0;
    DepthMap map(width, height);
    for (int j = height - 1; j >= 0; --j) {
        for (int i = 0; i < width; ++i) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) {
                const int shift = little ? 8 * b : 8 * (3 - b);
                bits |= static_cast<std::uint32_t>(bytes[pos + b]) << shift;
            }
            pos += 4;
            map.at(i, j) = static_cast<double>(std::bit_cast<float>(bits));
        }
    }
    return map;
}

void write_pfm(const DepthMap& map, const std::filesystem::path& path) {
    const auto bytes = encode_pfm(map);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("failed writing: " + path.string());
    }
}

DepthMap read_pfm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open: " + path.string());
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_pfm(bytes);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

}  // namespace thermacal

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

namespace cmw {

using PlaneF = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense motion field in pixels per frame interval. Image convention:
/// x grows rightward, y downward, and (u, v) = (dx, dy).
/// Planes are indexed (row, col) = (y, x).
struct FlowField {
    PlaneF u;
    PlaneF v;

    FlowField() = default;
    FlowField(int width, int height) : u(PlaneF::Zero(height, width)), v(PlaneF::Zero(height, width)) {}
    FlowField(PlaneF u_, PlaneF v_) : u(std::move(u_)), v(std::move(v_))
    {
        if (u.rows() != v.rows() || u.cols() != v.cols()) throw std::invalid_argument("FlowField: u/v size mismatch");
    }

    static FlowField constant(int width, int height, float du, float dv)
    {
        return {PlaneF::Constant(height, width, du), PlaneF::Constant(height, width, dv)};
    }

    int width() const { return static_cast<int>(u.cols()); }
    int height() const { return static_cast<int>(u.rows()); }

    PlaneF magnitude() const { return (u.square() + v.square()).sqrt(); }

    bool same_size(const FlowField& other) const { return width() == other.width() && height() == other.height(); }
};

/// 8-bit raster, 1 (gray) or 3 (RGB) interleaved channels, row-major.
struct RasterImage {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<std::uint8_t> pixels;

    RasterImage() = default;
    RasterImage(int w, int h, int c, std::uint8_t fill = 0)
        : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill)
    {
        if (c != 1 && c != 3) throw std::invalid_argument("RasterImage: channels must be 1 or 3");
    }

    std::uint8_t& at(int x, int y, int c = 0) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    std::uint8_t at(int x, int y, int c = 0) const
    {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    bool operator==(const RasterImage&) const = default;
};

/// Bilinear interpolation of a single plane at (x, y), clamped to the edge.
inline float bilinear_plane(const PlaneF& plane, double x, double y)
{
    const auto w = plane.cols(), h = plane.rows();
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    const auto x0 = static_cast<Eigen::Index>(x), y0 = static_cast<Eigen::Index>(y);
    const auto x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
    const double top = (1 - fx) * plane(y0, x0) + fx * plane(y0, x1);
    const double bottom = (1 - fx) * plane(y1, x0) + fx * plane(y1, x1);
    return static_cast<float>((1 - fy) * top + fy * bottom);
}

/// Bilinear flow lookup; (x, y) must lie inside [0, w-1] x [0, h-1].
std::pair<double, double> bilinear_sample(const FlowField& f, double x, double y);

/// Block replication: out(i, j) = in(i / factor, j / factor).
FlowField upsample_nearest(const FlowField& f, int factor);

} // namespace cmw

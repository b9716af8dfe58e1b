#pragma once

#include "cmw/flow_field.hpp"

#include <array>
#include <optional>
#include <vector>

namespace cmw {

/// Magnitude at the 99th percentile (nearest-rank); 0 for an empty field.
double percentile_magnitude(const FlowField& f, double percentile = 99.0);

struct Hsv {
    double hue;        // degrees in [0, 360)
    double saturation; // [0, 1]
    double value;      // [0, 1]
};

/// Direction as hue (0 deg = +x, increasing toward +y), magnitude as
/// saturation relative to `mag_ref`, full value. Zero motion is white.
Hsv flow_to_hsv(double u, double v, double mag_ref);

std::array<std::uint8_t, 3> hsv_to_rgb(const Hsv& hsv);

/// RGB color coding of a field. `mag_ref` defaults to the 99th-percentile
/// magnitude, or 1 when that is zero.
RasterImage colorize(const FlowField& f, std::optional<double> mag_ref = std::nullopt);

struct StreamPoint {
    double x;
    double y;
    double speed;
};

/// Integrates dp/dt = f(p) from (x0, y0) with classical RK4 through bilinear
/// samples. Stops when a stage leaves the domain, the speed drops below
/// 1e-3, or after `max_steps`. The first point is the seed.
std::vector<StreamPoint> trace_streamline(const FlowField& f, double x0, double y0, double step, int max_steps);

/// Grayscale streamline diagram: seeds on a `seed_stride` grid, polylines
/// brightened in proportion to local speed, seeds drawn at full intensity.
RasterImage render_streamlines(const FlowField& f, int seed_stride, double step, int max_steps);

struct Arrow {
    double x0, y0; // tail
    double x1, y1; // tip
    double magnitude;
};

/// Arrows on a `grid_stride` grid with length `scale` * |f|; arrows
/// shorter than `min_frac` * (99th-percentile magnitude) or of zero
/// magnitude are dropped.
std::vector<Arrow> arrow_layout(const FlowField& f, int grid_stride, double scale = 5.0, double min_frac = 0.1);

/// Arrow diagram: black arrows on a white grayscale canvas.
RasterImage render_arrows(const FlowField& f, int grid_stride, double scale = 5.0, double min_frac = 0.1);

/// Bresenham segment, clipped to the image; keeps the brighter of the
/// existing and new value when `max_blend` is set.
void draw_line(RasterImage& img, int x0, int y0, int x1, int y1, std::uint8_t value, bool max_blend = false);

} // namespace cmw

#include "cmw/visualize.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cmw {

double percentile_magnitude(const FlowField& f, double percentile)
{
    const PlaneF mag = f.magnitude();
    std::vector<float> values(mag.data(), mag.data() + mag.size());
    if (values.empty()) return 0.0;
    const auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * static_cast<double>(values.size())));
    const std::size_t idx = std::clamp<std::size_t>(rank, 1, values.size()) - 1;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(idx), values.end());
    return values[idx];
}

Hsv flow_to_hsv(double u, double v, double mag_ref)
{
    double angle = std::atan2(v, u);
    if (angle < 0) angle += 2 * std::numbers::pi;
    double hue = angle * 180.0 / std::numbers::pi;
    if (hue >= 360.0) hue -= 360.0;
    const double mag = std::hypot(u, v);
    return {hue, std::min(1.0, mag / mag_ref), 1.0};
}

std::array<std::uint8_t, 3> hsv_to_rgb(const Hsv& hsv)
{
    const double c = hsv.value * hsv.saturation;
    const double hp = hsv.hue / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
    }
    const double m = hsv.value - c;
    auto to8 = [](double t) { return static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0)); };
    return {to8(r + m), to8(g + m), to8(b + m)};
}

RasterImage colorize(const FlowField& f, std::optional<double> mag_ref)
{
    if (mag_ref && !(*mag_ref > 0)) throw std::invalid_argument("colorize: mag_ref must be positive");
    double ref = mag_ref.value_or(percentile_magnitude(f));
    if (!(ref > 0)) ref = 1.0;
    RasterImage img(f.width(), f.height(), 3);
    for (int y = 0; y < f.height(); ++y) {
        for (int x = 0; x < f.width(); ++x) {
            const auto rgb = hsv_to_rgb(flow_to_hsv(f.u(y, x), f.v(y, x), ref));
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = rgb[c];
        }
    }
    return img;
}

namespace {

bool inside(const FlowField& f, double x, double y)
{
    return x >= 0 && y >= 0 && x <= f.width() - 1 && y <= f.height() - 1;
}

} // namespace

std::vector<StreamPoint> trace_streamline(const FlowField& f, double x0, double y0, double step, int max_steps)
{
    if (!(step > 0)) throw std::invalid_argument("trace_streamline: step must be positive");
    std::vector<StreamPoint> path;
    if (!inside(f, x0, y0)) return path;
    auto [u, v] = bilinear_sample(f, x0, y0);
    path.push_back({x0, y0, std::hypot(u, v)});
    double x = x0, y = y0;
    for (int s = 0; s < max_steps; ++s) {
        if (path.back().speed < 1e-3) break;
        const auto [k1u, k1v] = bilinear_sample(f, x, y);
        const double x2 = x + 0.5 * step * k1u, y2 = y + 0.5 * step * k1v;
        if (!inside(f, x2, y2)) break;
        const auto [k2u, k2v] = bilinear_sample(f, x2, y2);
        const double x3 = x + 0.5 * step * k2u, y3 = y + 0.5 * step * k2v;
        if (!inside(f, x3, y3)) break;
        const auto [k3u, k3v] = bilinear_sample(f, x3, y3);
        const double x4 = x + step * k3u, y4 = y + step * k3v;
        if (!inside(f, x4, y4)) break;
        const auto [k4u, k4v] = bilinear_sample(f, x4, y4);
        const double nx = x + step / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u);
        const double ny = y + step / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
        if (!inside(f, nx, ny)) break;
        x = nx;
        y = ny;
        std::tie(u, v) = bilinear_sample(f, x, y);
        path.push_back({x, y, std::hypot(u, v)});
    }
    return path;
}

void draw_line(RasterImage& img, int x0, int y0, int x1, int y1, std::uint8_t value, bool max_blend)
{
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
        if (x0 >= 0 && y0 >= 0 && x0 < img.width && y0 < img.height) {
            for (int c = 0; c < img.channels; ++c) {
                auto& px = img.at(x0, y0, c);
                px = max_blend ? std::max(px, value) : value;
            }
        }
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

RasterImage render_streamlines(const FlowField& f, int seed_stride, double step, int max_steps)
{
    if (seed_stride < 1) throw std::invalid_argument("render_streamlines: seed_stride must be >= 1");
    if (!(step > 0)) throw std::invalid_argument("render_streamlines: step must be positive");
    double ref = percentile_magnitude(f);
    if (!(ref > 0)) ref = 1.0;
    RasterImage img(f.width(), f.height(), 1, 0);
    auto px = [](double t) { return static_cast<int>(std::lround(t)); };
    for (int sy = seed_stride / 2; sy < f.height(); sy += seed_stride) {
        for (int sx = seed_stride / 2; sx < f.width(); sx += seed_stride) {
            const auto path = trace_streamline(f, sx, sy, step, max_steps);
            for (std::size_t i = 1; i < path.size(); ++i) {
                const double speed = 0.5 * (path[i - 1].speed + path[i].speed);
                const auto level = static_cast<std::uint8_t>(64 + std::lround(191.0 * std::min(1.0, speed / ref)));
                draw_line(img, px(path[i - 1].x), px(path[i - 1].y), px(path[i].x), px(path[i].y), level, true);
            }
            img.at(sx, sy) = 255;
        }
    }
    return img;
}

std::vector<Arrow> arrow_layout(const FlowField& f, int grid_stride, double scale, double min_frac)
{
    if (grid_stride < 1) throw std::invalid_argument("arrow_layout: grid_stride must be >= 1");
    const double threshold = min_frac * percentile_magnitude(f);
    std::vector<Arrow> arrows;
    for (int y = grid_stride / 2; y < f.height(); y += grid_stride) {
        for (int x = grid_stride / 2; x < f.width(); x += grid_stride) {
            const double u = f.u(y, x), v = f.v(y, x);
            const double mag = std::hypot(u, v);
            if (mag == 0.0 || mag < threshold) continue;
            arrows.push_back({double(x), double(y), x + scale * u, y + scale * v, mag});
        }
    }
    return arrows;
}

RasterImage render_arrows(const FlowField& f, int grid_stride, double scale, double min_frac)
{
    RasterImage img(f.width(), f.height(), 1, 255);
    auto px = [](double t) { return static_cast<int>(std::lround(t)); };
    for (const auto& a : arrow_layout(f, grid_stride, scale, min_frac)) {
        draw_line(img, px(a.x0), px(a.y0), px(a.x1), px(a.y1), 0);
        const double len = std::hypot(a.x1 - a.x0, a.y1 - a.y0);
        const double head = std::min(3.0, 0.35 * len);
        if (head < 1.0) continue;
        const double angle = std::atan2(a.y1 - a.y0, a.x1 - a.x0);
        for (double side : {-1.0, 1.0}) {
            const double barb = angle + std::numbers::pi + side * std::numbers::pi / 6.0;
            draw_line(img, px(a.x1), px(a.y1), px(a.x1 + head * std::cos(barb)), px(a.y1 + head * std::sin(barb)), 0);
        }
    }
    return img;
}

} // namespace cmw

#include "cmw/flow_field.hpp"

#include <string>

namespace cmw {

std::pair<double, double> bilinear_sample(const FlowField& f, double x, double y)
{
    const int w = f.width(), h = f.height();
    if (!(x >= 0 && y >= 0 && x <= w - 1 && y <= h - 1)) {
        throw std::out_of_range("bilinear_sample: (" + std::to_string(x) + ", " + std::to_string(y)
                                + ") outside the field");
    }
    const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
    const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    const double fx = x - x0, fy = y - y0;
    auto interp = [&](const PlaneF& p) {
        const double top = (1 - fx) * p(y0, x0) + fx * p(y0, x1);
        const double bottom = (1 - fx) * p(y1, x0) + fx * p(y1, x1);
        return (1 - fy) * top + fy * bottom;
    };
    return {interp(f.u), interp(f.v)};
}

FlowField upsample_nearest(const FlowField& f, int factor)
{
    if (factor < 1) throw std::invalid_argument("upsample_nearest: factor must be >= 1");
    FlowField out(f.width() * factor, f.height() * factor);
    for (int y = 0; y < out.height(); ++y) {
        for (int x = 0; x < out.width(); ++x) {
            out.u(y, x) = f.u(y / factor, x / factor);
            out.v(y, x) = f.v(y / factor, x / factor);
        }
    }
    return out;
}

} // namespace cmw

#include "cmw/dataset.hpp"
#include "cmw/io.hpp"
#include "cmw/visualize.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace cmw;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name)
    {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST_CASE("a 1x1 .flo is 20 bytes with the documented header")
{
    TempDir tmp("cmw_test_flo");
    FlowField f = FlowField::constant(1, 1, 1.5f, -2.0f);
    write_flo(f, tmp.path / "a.flo");
    CHECK(fs::file_size(tmp.path / "a.flo") == 20);

    std::ifstream is(tmp.path / "a.flo", std::ios::binary);
    CHECK(le::read<float>(is, "t") == 202021.25f);
    CHECK(le::read<std::int32_t>(is, "t") == 1);
    CHECK(le::read<std::int32_t>(is, "t") == 1);
    CHECK(le::read<float>(is, "t") == 1.5f);
    CHECK(le::read<float>(is, "t") == -2.0f);

    const auto g = read_flo(tmp.path / "a.flo");
    CHECK(g.u(0, 0) == 1.5f);
    CHECK(g.v(0, 0) == -2.0f);
}

TEST_CASE("malformed .flo files are rejected")
{
    TempDir tmp("cmw_test_flo_bad");
    {
        std::ofstream os(tmp.path / "magic.flo", std::ios::binary);
        le::write(os, 1.0f);
        le::write(os, std::int32_t{1});
        le::write(os, std::int32_t{1});
        le::write(os, 0.0f);
        le::write(os, 0.0f);
    }
    CHECK_THROWS_AS(read_flo(tmp.path / "magic.flo"), FormatError);
    {
        std::ofstream os(tmp.path / "short.flo", std::ios::binary);
        le::write(os, kFloMagic);
        le::write(os, std::int32_t{4});
        le::write(os, std::int32_t{4});
        le::write(os, 0.0f);
    }
    CHECK_THROWS_AS(read_flo(tmp.path / "short.flo"), FormatError);
    {
        std::ofstream os(tmp.path / "neg.flo", std::ios::binary);
        le::write(os, kFloMagic);
        le::write(os, std::int32_t{-1});
        le::write(os, std::int32_t{4});
    }
    CHECK_THROWS_AS(read_flo(tmp.path / "neg.flo"), FormatError);
    CHECK_THROWS_AS(read_flo(tmp.path / "missing.flo"), FormatError);
}

TEST_CASE("png round trip for gray and rgb")
{
    TempDir tmp("cmw_test_png");
    RasterImage gray(5, 3, 1), rgb(4, 2, 3);
    for (std::size_t i = 0; i < gray.pixels.size(); ++i) gray.pixels[i] = static_cast<std::uint8_t>(i * 17);
    for (std::size_t i = 0; i < rgb.pixels.size(); ++i) rgb.pixels[i] = static_cast<std::uint8_t>(255 - i * 9);
    write_png(gray, tmp.path / "g.png");
    write_png(rgb, tmp.path / "c.png");
    CHECK(read_png(tmp.path / "g.png") == gray);
    CHECK(read_png(tmp.path / "c.png") == rgb);
    CHECK_THROWS_AS(read_png(tmp.path / "none.png"), FormatError);
}

TEST_CASE("colorize reference colors")
{
    const auto white = colorize(FlowField(3, 2));
    for (auto p : white.pixels) CHECK(p == 255);

    const auto red = colorize(FlowField::constant(1, 1, 2.0f, 0.0f), 2.0);
    CHECK(red.at(0, 0, 0) == 255);
    CHECK(red.at(0, 0, 1) == 0);
    CHECK(red.at(0, 0, 2) == 0);

    // Hue 90 deg at full saturation: red falls linearly to 0.5 across the 60..120 sector.
    const auto rgb = hsv_to_rgb(flow_to_hsv(0.0, 1.0, 1.0));
    CHECK(rgb[0] == 128);
    CHECK(rgb[1] == 255);
    CHECK(rgb[2] == 0);

    const auto h = flow_to_hsv(-1.0, 0.0, 4.0);
    CHECK(h.hue == doctest::Approx(180.0));
    CHECK(h.saturation == doctest::Approx(0.25));
    CHECK(flow_to_hsv(0.0, -3.0, 1.0).hue == doctest::Approx(270.0));
    CHECK_THROWS_AS(colorize(FlowField(2, 2), 0.0), std::invalid_argument);
}

TEST_CASE("percentile magnitude uses nearest rank")
{
    FlowField f(10, 10);
    for (int i = 0; i < 100; ++i) f.u(i / 10, i % 10) = static_cast<float>(i + 1);
    CHECK(percentile_magnitude(f, 99.0) == doctest::Approx(99.0));
    CHECK(percentile_magnitude(f, 100.0) == doctest::Approx(100.0));
    CHECK(percentile_magnitude(f, 50.0) == doctest::Approx(50.0));
}

TEST_CASE("bilinear sampling is exact on affine fields")
{
    FlowField f(8, 8);
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
            f.u(y, x) = 2.0f * x - y;
            f.v(y, x) = 0.5f * y + 3.0f;
        }
    }
    const auto [u, v] = bilinear_sample(f, 2.25, 5.5);
    CHECK(u == doctest::Approx(2 * 2.25 - 5.5));
    CHECK(v == doctest::Approx(0.5 * 5.5 + 3.0));
    CHECK_THROWS_AS(bilinear_sample(f, 7.5, 0.0), std::out_of_range);
    CHECK_THROWS_AS(bilinear_sample(f, -0.1, 0.0), std::out_of_range);
}

TEST_CASE("streamlines of a solid rotation stay on their circle")
{
    FlowSpec spec;
    spec.kind = FlowKind::Rotate;
    spec.omega = 0.05;
    spec.cx = spec.cy = 32;
    const auto f = analytic_flow(spec, 64, 64);
    const double r0 = 12.0;
    const auto line = trace_streamline(f, 32 + r0, 32, 0.5, 400); // ~1.6 turns
    REQUIRE(line.size() == 401);
    double worst = 0;
    for (const auto& p : line) worst = std::max(worst, std::abs(std::hypot(p.x - 32, p.y - 32) - r0) / r0);
    CHECK(worst < 0.01);
    CHECK(line.front().x == 32 + r0);
}

TEST_CASE("streamlines stop at stagnation and at the border")
{
    CHECK(trace_streamline(FlowField(16, 16), 5, 5, 0.5, 50).size() == 1);
    const auto line = trace_streamline(FlowField::constant(16, 16, 1.0f, 0.0f), 2, 8, 1.0, 100);
    CHECK(line.size() < 16);
    CHECK(line.back().x <= 15.0);
}

TEST_CASE("arrow layout: grid count, scaling and filtering")
{
    const auto uniform = arrow_layout(FlowField::constant(64, 64, 1.0f, 2.0f), 16);
    REQUIRE(uniform.size() == 16);
    CHECK(uniform[0].x0 == 8);
    CHECK(uniform[0].x1 - uniform[0].x0 == doctest::Approx(5.0));
    CHECK(uniform[0].y1 - uniform[0].y0 == doctest::Approx(10.0));

    CHECK(arrow_layout(FlowField(64, 64), 16).empty());

    // Left half at 0.05 px against a 1 px right half: below 0.1 x p99, dropped.
    FlowField half = FlowField::constant(64, 64, 1.0f, 0.0f);
    half.u.leftCols(32).setConstant(0.05f);
    CHECK(arrow_layout(half, 16).size() == 8);
    CHECK(arrow_layout(half, 16, 5.0, 0.0).size() == 16);
}

TEST_CASE("renderers produce the requested canvases")
{
    const auto f = FlowField::constant(32, 32, 2.0f, 1.0f);
    const auto arrows = render_arrows(f, 16);
    CHECK(arrows.channels == 1);
    CHECK(arrows.width == 32);
    CHECK(std::count(arrows.pixels.begin(), arrows.pixels.end(), 0) > 0);
    const auto lines = render_streamlines(f, 8, 0.5, 50);
    CHECK(lines.height == 32);
    CHECK(std::count(lines.pixels.begin(), lines.pixels.end(), 255) > 0);
}

TEST_CASE("draw_line covers both endpoints and clips")
{
    RasterImage img(10, 10, 1);
    draw_line(img, 1, 1, 8, 4, 200);
    CHECK(img.at(1, 1) == 200);
    CHECK(img.at(8, 4) == 200);
    draw_line(img, -5, 5, 20, 5, 100);
    CHECK(img.at(0, 5) == 100);
    CHECK(img.at(9, 5) == 100);
    draw_line(img, 0, 5, 9, 5, 50, true);
    CHECK(img.at(3, 5) == 100);
}

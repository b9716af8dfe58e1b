#include "cmw/io.hpp"

#include <png.h>

#include <cmath>
#include <fstream>
#include <limits>

namespace cmw {

void write_flo(const FlowField& f, const std::filesystem::path& path)
{
    if (!f.u.allFinite() || !f.v.allFinite()) throw std::invalid_argument("write_flo: field has non-finite values");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("write_flo: cannot open " + path.string());
    le::write(os, kFloMagic);
    le::write(os, static_cast<std::int32_t>(f.width()));
    le::write(os, static_cast<std::int32_t>(f.height()));
    for (int y = 0; y < f.height(); ++y) {
        for (int x = 0; x < f.width(); ++x) {
            le::write(os, f.u(y, x));
            le::write(os, f.v(y, x));
        }
    }
    if (!os) throw FormatError("write_flo: write failed for " + path.string());
}

FlowField read_flo(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("read_flo: cannot open " + path.string());
    const std::string what = "read_flo(" + path.string() + ")";
    const auto magic = le::read<float>(is, what);
    if (magic != kFloMagic) throw FormatError(what + ": bad magic");
    const auto w = le::read<std::int32_t>(is, what);
    const auto h = le::read<std::int32_t>(is, what);
    if (w <= 0 || h <= 0) throw FormatError(what + ": invalid dimensions");
    const auto body = static_cast<std::uint64_t>(w) * static_cast<std::uint64_t>(h) * 8;
    is.seekg(0, std::ios::end);
    const auto size = static_cast<std::uint64_t>(is.tellg());
    if (body > static_cast<std::uint64_t>(std::numeric_limits<std::int32_t>::max())) {
        throw FormatError(what + ": dimension overflow");
    }
    if (size < 12 + body) throw FormatError(what + ": truncated body");
    if (size > 12 + body) throw FormatError(what + ": trailing bytes after body");
    is.seekg(12);
    FlowField f(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            f.u(y, x) = le::read<float>(is, what);
            f.v(y, x) = le::read<float>(is, what);
        }
    }
    return f;
}

void write_png(const RasterImage& img, const std::filesystem::path& path)
{
    if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels) {
        throw std::invalid_argument("write_png: pixel buffer size mismatch");
    }
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    const std::string name = path.string();
    if (!png_image_write_to_file(&image, name.c_str(), 0, img.pixels.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw FormatError("write_png(" + name + "): " + msg);
    }
}

RasterImage read_png(const std::filesystem::path& path)
{
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    const std::string name = path.string();
    if (!png_image_begin_read_from_file(&image, name.c_str())) {
        throw FormatError("read_png(" + name + "): " + std::string(image.message));
    }
    const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
    image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    RasterImage out(static_cast<int>(image.width), static_cast<int>(image.height), color ? 3 : 1);
    if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw FormatError("read_png(" + name + "): " + msg);
    }
    return out;
}

} // namespace cmw

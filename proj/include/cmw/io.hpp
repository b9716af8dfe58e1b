#pragma once

#include "cmw/flow_field.hpp"

#include <bit>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace cmw {

/// Raised for malformed or unreadable files.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace le {

template <typename T>
void write(std::ostream& os, T value)
{
    static_assert(std::is_trivially_copyable_v<T>);
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    static_assert(sizeof(T) == sizeof(U));
    const U bits = std::bit_cast<U>(value);
    char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    os.write(bytes, sizeof(U));
}

template <typename T>
T read(std::istream& is, const std::string& what)
{
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    static_assert(sizeof(T) == sizeof(U));
    unsigned char bytes[sizeof(U)];
    if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw FormatError(what + ": truncated file");
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(bytes[i]) << (8 * i);
    return std::bit_cast<T>(bits);
}

} // namespace le

/// Middlebury .flo: float32 202021.25, int32 width, int32 height, then
/// interleaved float32 (u, v) row by row, little-endian throughout.
inline constexpr float kFloMagic = 202021.25f;

void write_flo(const FlowField& f, const std::filesystem::path& path);
FlowField read_flo(const std::filesystem::path& path);

void write_png(const RasterImage& img, const std::filesystem::path& path);
RasterImage read_png(const std::filesystem::path& path);

} // namespace cmw

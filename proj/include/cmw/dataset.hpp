#pragma once

#include "cmw/flow_field.hpp"
#include "cmw/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmw {

/// Separable Gaussian blur with mirrored borders; radius ceil(3 sigma).
PlaneF gaussian_blur(const PlaneF& plane, double sigma);

PlaneF to_plane(const RasterImage& img); // channel mean, [0, 255]
RasterImage to_raster(const PlaneF& plane); // rounds and clamps to 8 bits

/// Cloud-like grayscale texture: a sum of `octaves` Gaussian-smoothed
/// white-noise layers of doubling scale, stretched to [0, 255].
/// `octaves == 0` gives a flat mid-gray image.
RasterImage generate_texture(int width, int height, std::uint64_t seed, int octaves = 3);

/// Streaky texture: white noise smeared along `angle` (radians from +x).
RasterImage generate_oriented_texture(int width, int height, std::uint64_t seed, double angle);

enum class FlowKind { Translate, Rotate, Vortex, Mixed };

FlowKind parse_flow_kind(const std::string& name);
std::string to_string(FlowKind kind);

/// Parameters for an analytic motion field. `Mixed` is a translation plus
/// a vortex. Vortices must circulate with positive curl (strength > 0).
struct FlowSpec {
    FlowKind kind = FlowKind::Translate;
    double u0 = 0, v0 = 0;            // translation, px / interval
    double omega = 0;                 // solid rotation, rad / interval
    double cx = 0, cy = 0;            // rotation / vortex center, px
    double core_radius = 8;           // vortex core, px
    double strength = 0;              // vortex tangential speed at the core radius
    std::uint64_t seed = 0;
};

/// Raised for a vortex with non-positive strength.
class SignConstraintError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

FlowField analytic_flow(const FlowSpec& spec, int width, int height);

/// Backward warp: out(q) = img(q - f(q)), bilinear, clamped at the border.
RasterImage warp_image(const RasterImage& img, const FlowField& f);

struct BlockMatchOptions {
    int block = 16;
    int stride = 8;
    int search = 20;
    double tau_var = 1e-4; // on [0, 1] intensities
    double tau_ncc = 0.5;
    double smooth_sigma = 4.0;
};

/// Raised when no block passes both the texture and correlation gates.
class EmptyLabelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SparseVector {
    double x, y;   // block center
    double u, v;
    double ncc;
};

/// Integer-displacement NCC matches at stride-spaced blocks of `a`.
/// Blocks below `tau_var`, peaks under `tau_ncc`, peaks on the edge of
/// the feasible search range, and matches whose reverse search (b back
/// into a) lands more than 1 px away are dropped.
std::vector<SparseVector> block_match_sparse(const RasterImage& a, const RasterImage& b, const BlockMatchOptions& opts);

/// Dense pseudo-label: sparse matches, inverse-distance-weighted to every
/// pixel, then Gaussian-smoothed.
FlowField block_match_label(const RasterImage& a, const RasterImage& b, const BlockMatchOptions& opts = {});

struct ManifestRecord {
    std::string id;
    std::string image_a;
    std::optional<std::string> image_b;
    std::string label;
    std::string split; // "train" or "test"
};

/// Paths in records are relative to `root`, the manifest's directory.
struct Manifest {
    std::filesystem::path root;
    std::vector<ManifestRecord> records;

    std::vector<const ManifestRecord*> split(const std::string& name) const;
    const ManifestRecord& find(const std::string& id) const;
};

void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

struct Sample {
    std::string id;
    RasterImage image_a;
    std::optional<RasterImage> image_b;
    FlowField label;
    double interval = 1.0;
};

Sample load_sample(const Manifest& manifest, const ManifestRecord& record);

/// Writes `<id>_a.png`, `<id>_b.png` and `<id>.flo` under `dir`.
ManifestRecord write_sample(const Sample& sample, const std::filesystem::path& dir, const std::string& split);

struct SynthOptions {
    std::vector<FlowKind> kinds = {FlowKind::Translate, FlowKind::Rotate};
    double translate_min = 2.0, translate_max = 5.0;
    double rotate_min = 2.0, rotate_max = 4.0; // max |omega| * r over the image
    double vortex_min = 2.0, vortex_max = 4.0; // strength
    int octaves = 3;
};

/// Draws a flow spec of `kind` from the option ranges.
FlowSpec sample_flow_spec(FlowKind kind, int size, const SynthOptions& options, std::uint64_t seed);

/// Textured pairs with exact analytic labels. The first
/// round(count * split_frac) samples are "train", the rest "test".
Manifest build_synthetic_dataset(const std::filesystem::path& out_dir, int count, double split_frac, int size,
                                 const SynthOptions& options, std::uint64_t seed);

enum class InputMode { Paired, Single };

/// Pixels scaled to [0, 1] then shifted by -0.5; gray replicated to RGB.
/// Paired: [a_rgb, b_rgb] (6 channels); single: a_rgb (3 channels).
Tensor<float> make_input(std::span<const Sample* const> batch, InputMode mode);

template <typename Scalar>
Tensor<Scalar> make_input_as(std::span<const Sample* const> batch, InputMode mode)
{
    return make_input(batch, mode).template cast<Scalar>();
}

struct Batch {
    Tensor<float> input;
    std::vector<FlowField> labels;
};

Batch load_batch(const Manifest& manifest, std::span<const std::string> ids, InputMode mode);

} // namespace cmw

#include "cmw/dataset.hpp"

#include "cmw/io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

namespace cmw {

namespace {

Eigen::Index mirror(Eigen::Index i, Eigen::Index n)
{
    if (n == 1) return 0;
    const Eigen::Index period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

std::vector<double> gaussian_kernel(double sigma)
{
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + radius];
    }
    for (double& v : k) v /= sum;
    return k;
}

PlaneF white_noise(int width, int height, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    PlaneF p(height, width);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<float>(normal(rng));
    return p;
}

PlaneF stretch_to_bytes(const PlaneF& p)
{
    const float lo = p.minCoeff(), hi = p.maxCoeff();
    if (!(hi > lo)) return PlaneF::Constant(p.rows(), p.cols(), 128.0f);
    return (p - lo) * (255.0f / (hi - lo));
}

double uniform(std::mt19937_64& rng, double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

} // namespace

PlaneF gaussian_blur(const PlaneF& plane, double sigma)
{
    if (!(sigma > 0)) return plane;
    const auto k = gaussian_kernel(sigma);
    const int radius = static_cast<int>(k.size() / 2);
    const Eigen::Index h = plane.rows(), w = plane.cols();
    Eigen::ArrayXXd tmp(h, w);
    for (Eigen::Index y = 0; y < h; ++y) {
        for (Eigen::Index x = 0; x < w; ++x) {
            double acc = 0;
            for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * plane(y, mirror(x + i, w));
            tmp(y, x) = acc;
        }
    }
    PlaneF out(h, w);
    for (Eigen::Index y = 0; y < h; ++y) {
        for (Eigen::Index x = 0; x < w; ++x) {
            double acc = 0;
            for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp(mirror(y + i, h), x);
            out(y, x) = static_cast<float>(acc);
        }
    }
    return out;
}

PlaneF to_plane(const RasterImage& img)
{
    PlaneF p(img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            float acc = 0;
            for (int c = 0; c < img.channels; ++c) acc += img.at(x, y, c);
            p(y, x) = acc / static_cast<float>(img.channels);
        }
    }
    return p;
}

RasterImage to_raster(const PlaneF& plane)
{
    RasterImage img(static_cast<int>(plane.cols()), static_cast<int>(plane.rows()), 1);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            img.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(plane(y, x)), 0L, 255L));
        }
    }
    return img;
}

RasterImage generate_texture(int width, int height, std::uint64_t seed, int octaves)
{
    if (width < 8 || height < 8) throw std::invalid_argument("generate_texture: width and height must be >= 8");
    if (octaves < 0) throw std::invalid_argument("generate_texture: octaves must be >= 0");
    std::mt19937_64 rng(seed);
    PlaneF acc = PlaneF::Zero(height, width);
    for (int o = 0; o < octaves; ++o) {
        PlaneF layer = gaussian_blur(white_noise(width, height, rng), 1.5 * std::pow(2.0, o));
        const float mean = layer.mean();
        const float stddev = std::sqrt((layer - mean).square().mean());
        if (stddev > 0) acc += (layer - mean) / stddev;
    }
    return to_raster(stretch_to_bytes(acc));
}

RasterImage generate_oriented_texture(int width, int height, std::uint64_t seed, double angle)
{
    if (width < 8 || height < 8) throw std::invalid_argument("generate_oriented_texture: width and height must be >= 8");
    std::mt19937_64 rng(seed);
    const PlaneF noise = white_noise(width, height, rng);
    const double along = 5.0, across = 1.0;
    const int radius = static_cast<int>(std::ceil(3.0 * along));
    const double c = std::cos(angle), s = std::sin(angle);
    std::vector<double> kernel;
    double total = 0;
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            const double a = dx * c + dy * s, b = -dx * s + dy * c;
            const double k = std::exp(-0.5 * (a * a / (along * along) + b * b / (across * across)));
            kernel.push_back(k);
            total += k;
        }
    }
    PlaneF out(height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double acc = 0;
            std::size_t i = 0;
            for (int dy = -radius; dy <= radius; ++dy) {
                for (int dx = -radius; dx <= radius; ++dx, ++i) acc += kernel[i] * noise(mirror(y + dy, height), mirror(x + dx, width));
            }
            out(y, x) = static_cast<float>(acc / total);
        }
    }
    return to_raster(stretch_to_bytes(out));
}

FlowKind parse_flow_kind(const std::string& name)
{
    if (name == "translate") return FlowKind::Translate;
    if (name == "rotate") return FlowKind::Rotate;
    if (name == "vortex") return FlowKind::Vortex;
    if (name == "mixed") return FlowKind::Mixed;
    throw std::invalid_argument("unknown flow kind '" + name + "'");
}

std::string to_string(FlowKind kind)
{
    switch (kind) {
    case FlowKind::Translate: return "translate";
    case FlowKind::Rotate: return "rotate";
    case FlowKind::Vortex: return "vortex";
    case FlowKind::Mixed: return "mixed";
    }
    return "unknown";
}

FlowField analytic_flow(const FlowSpec& spec, int width, int height)
{
    if (width < 1 || height < 1) throw std::invalid_argument("analytic_flow: empty field");
    const bool has_vortex = spec.kind == FlowKind::Vortex || spec.kind == FlowKind::Mixed;
    if (has_vortex) {
        if (!(spec.strength > 0)) throw SignConstraintError("analytic_flow: vortex must circulate counterclockwise (strength > 0)");
        if (!(spec.core_radius > 0)) throw std::invalid_argument("analytic_flow: vortex core radius must be positive");
    }
    FlowField f(width, height);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double dx = x - spec.cx, dy = y - spec.cy;
            double u = 0, v = 0;
            switch (spec.kind) {
            case FlowKind::Translate:
                u = spec.u0;
                v = spec.v0;
                break;
            case FlowKind::Rotate:
                u = -spec.omega * dy;
                v = spec.omega * dx;
                break;
            case FlowKind::Vortex:
            case FlowKind::Mixed: {
                const double r = std::hypot(dx, dy);
                if (r > 0) {
                    // Rankine profile: solid rotation inside the core, 1/r decay outside.
                    const double speed = r <= spec.core_radius ? spec.strength * r / spec.core_radius
                                                               : spec.strength * spec.core_radius / r;
                    u = -speed * dy / r;
                    v = speed * dx / r;
                }
                if (spec.kind == FlowKind::Mixed) {
                    u += spec.u0;
                    v += spec.v0;
                }
                break;
            }
            }
            f.u(y, x) = static_cast<float>(u);
            f.v(y, x) = static_cast<float>(v);
        }
    }
    const double limit = 0.25 * std::min(width, height);
    if (f.magnitude().maxCoeff() > limit) {
        throw std::invalid_argument("analytic_flow: displacement exceeds a quarter of the image side");
    }
    return f;
}

RasterImage warp_image(const RasterImage& img, const FlowField& f)
{
    if (img.width != f.width() || img.height != f.height()) throw std::invalid_argument("warp_image: size mismatch");
    RasterImage out(img.width, img.height, img.channels);
    for (int c = 0; c < img.channels; ++c) {
        PlaneF plane(img.height, img.width);
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) plane(y, x) = img.at(x, y, c);
        }
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                const double sx = x - static_cast<double>(f.u(y, x));
                const double sy = y - static_cast<double>(f.v(y, x));
                const float value = bilinear_plane(plane, sx, sy);
                out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
            }
        }
    }
    return out;
}

std::vector<SparseVector> block_match_sparse(const RasterImage& a, const RasterImage& b, const BlockMatchOptions& opts)
{
    if (a.width != b.width || a.height != b.height) throw std::invalid_argument("block_match_label: image size mismatch");
    if (opts.block < 4) throw std::invalid_argument("block_match_label: block must be >= 4");
    if (opts.search < 1) throw std::invalid_argument("block_match_label: search must be >= 1");
    if (opts.stride < 1) throw std::invalid_argument("block_match_label: stride must be >= 1");
    const int w = a.width, h = a.height, bs = opts.block;
    if (w < bs || h < bs) throw std::invalid_argument("block_match_label: image smaller than block");
    const Eigen::ArrayXXd pa = to_plane(a).cast<double>() / 255.0;
    const Eigen::ArrayXXd pb = to_plane(b).cast<double>() / 255.0;
    const double n = static_cast<double>(bs) * bs;

    // Window sums over the target via integral images of t and t^2.
    struct Target {
        const Eigen::ArrayXXd& plane;
        Eigen::ArrayXXd sum, sq;
    };
    auto integrals = [&](const Eigen::ArrayXXd& t) {
        Target out{t, Eigen::ArrayXXd::Zero(h + 1, w + 1), Eigen::ArrayXXd::Zero(h + 1, w + 1)};
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                out.sum(y + 1, x + 1) = t(y, x) + out.sum(y, x + 1) + out.sum(y + 1, x) - out.sum(y, x);
                out.sq(y + 1, x + 1) = t(y, x) * t(y, x) + out.sq(y, x + 1) + out.sq(y + 1, x) - out.sq(y, x);
            }
        }
        return out;
    };
    const Target ta = integrals(pa), tb = integrals(pb);
    auto window = [&](const Eigen::ArrayXXd& t, int x, int y) {
        return t(y + bs, x + bs) - t(y, x + bs) - t(y + bs, x) + t(y, x);
    };

    struct Match {
        double ncc = -std::numeric_limits<double>::infinity();
        int dx = 0, dy = 0;
        bool on_edge = false;
    };
    // Best NCC displacement of the block of `src` at (bx, by) within `target`.
    auto search = [&](const Eigen::ArrayXXd& src, int bx, int by, const Target& target, double* variance) {
        const Eigen::ArrayXXd centered = src.block(by, bx, bs, bs) - src.block(by, bx, bs, bs).mean();
        const double energy = centered.square().sum();
        if (variance) *variance = energy / n;
        Match m;
        if (energy <= 1e-12) return m;
        const int dx_lo = std::max(-opts.search, -bx), dx_hi = std::min(opts.search, w - bs - bx);
        const int dy_lo = std::max(-opts.search, -by), dy_hi = std::min(opts.search, h - bs - by);
        for (int dy = dy_lo; dy <= dy_hi; ++dy) {
            for (int dx = dx_lo; dx <= dx_hi; ++dx) {
                const int x = bx + dx, y = by + dy;
                const double s = window(target.sum, x, y);
                const double e = window(target.sq, x, y) - s * s / n;
                if (e <= 1e-12) continue;
                // sum(centered * t) == sum(centered * (t - mean_t)) since centered sums to zero.
                const double ncc = (centered * target.plane.block(y, x, bs, bs)).sum() / std::sqrt(energy * e);
                if (ncc > m.ncc) {
                    m.ncc = ncc;
                    m.dx = dx;
                    m.dy = dy;
                }
            }
        }
        m.on_edge = m.dx == dx_lo || m.dx == dx_hi || m.dy == dy_lo || m.dy == dy_hi;
        return m;
    };

    std::vector<SparseVector> out;
    for (int by = 0; by + bs <= h; by += opts.stride) {
        for (int bx = 0; bx + bs <= w; bx += opts.stride) {
            double variance = 0;
            const Match fwd = search(pa, bx, by, tb, &variance);
            if (variance < opts.tau_var) continue;
            if (!(fwd.ncc >= opts.tau_ncc) || fwd.on_edge) continue;
            // The matched block of b must lead back to where it came from.
            const Match back = search(pb, bx + fwd.dx, by + fwd.dy, ta, nullptr);
            if (std::abs(back.dx + fwd.dx) > 1 || std::abs(back.dy + fwd.dy) > 1) continue;
            const double center = 0.5 * (bs - 1);
            out.push_back({bx + center, by + center, double(fwd.dx), double(fwd.dy), fwd.ncc});
        }
    }
    return out;
}

FlowField block_match_label(const RasterImage& a, const RasterImage& b, const BlockMatchOptions& opts)
{
    const auto sparse = block_match_sparse(a, b, opts);
    if (sparse.empty()) throw EmptyLabelError("block_match_label: no block passed the texture and correlation gates");
    FlowField dense(a.width, a.height);
    for (int y = 0; y < a.height; ++y) {
        for (int x = 0; x < a.width; ++x) {
            double wsum = 0, usum = 0, vsum = 0;
            for (const auto& s : sparse) {
                const double d2 = (x - s.x) * (x - s.x) + (y - s.y) * (y - s.y);
                if (d2 < 1e-12) {
                    usum = s.u;
                    vsum = s.v;
                    wsum = 1;
                    break;
                }
                const double wt = 1.0 / d2;
                wsum += wt;
                usum += wt * s.u;
                vsum += wt * s.v;
            }
            dense.u(y, x) = static_cast<float>(usum / wsum);
            dense.v(y, x) = static_cast<float>(vsum / wsum);
        }
    }
    dense.u = gaussian_blur(dense.u, opts.smooth_sigma);
    dense.v = gaussian_blur(dense.v, opts.smooth_sigma);
    return dense;
}

std::vector<const ManifestRecord*> Manifest::split(const std::string& name) const
{
    std::vector<const ManifestRecord*> out;
    for (const auto& r : records) {
        if (r.split == name) out.push_back(&r);
    }
    return out;
}

const ManifestRecord& Manifest::find(const std::string& id) const
{
    for (const auto& r : records) {
        if (r.id == id) return r;
    }
    throw std::out_of_range("manifest has no record '" + id + "'");
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path)
{
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : manifest.records) {
        nlohmann::json j;
        j["id"] = r.id;
        j["image_a"] = r.image_a;
        j["image_b"] = r.image_b ? nlohmann::json(*r.image_b) : nlohmann::json(nullptr);
        j["label"] = r.label;
        j["split"] = r.split;
        records.push_back(std::move(j));
    }
    std::ofstream os(path);
    if (!os) throw FormatError("write_manifest: cannot open " + path.string());
    os << nlohmann::json{{"records", records}}.dump(2) << "\n";
    if (!os) throw FormatError("write_manifest: write failed for " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw FormatError("read_manifest: cannot open " + path.string());
    Manifest m;
    m.root = path.parent_path();
    try {
        const auto doc = nlohmann::json::parse(is);
        for (const auto& j : doc.at("records")) {
            ManifestRecord r;
            r.id = j.at("id").get<std::string>();
            r.image_a = j.at("image_a").get<std::string>();
            if (j.contains("image_b") && !j.at("image_b").is_null()) r.image_b = j.at("image_b").get<std::string>();
            r.label = j.at("label").get<std::string>();
            r.split = j.at("split").get<std::string>();
            if (r.split != "train" && r.split != "test") throw FormatError("record " + r.id + ": split must be train or test");
            m.records.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("read_manifest(" + path.string() + "): " + e.what());
    }
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        const auto& r = m.records[i];
        for (std::size_t j = 0; j < i; ++j) {
            if (m.records[j].id == r.id) throw FormatError("read_manifest: duplicate id " + r.id);
        }
        for (const auto* rel : {&r.image_a, &r.label}) {
            if (!std::filesystem::exists(m.root / *rel)) throw FormatError("read_manifest: missing file " + (m.root / *rel).string());
        }
        if (r.image_b && !std::filesystem::exists(m.root / *r.image_b)) {
            throw FormatError("read_manifest: missing file " + (m.root / *r.image_b).string());
        }
    }
    return m;
}

Sample load_sample(const Manifest& manifest, const ManifestRecord& record)
{
    Sample s;
    s.id = record.id;
    s.image_a = read_png(manifest.root / record.image_a);
    if (record.image_b) s.image_b = read_png(manifest.root / *record.image_b);
    s.label = read_flo(manifest.root / record.label);
    const bool b_ok = !s.image_b || (s.image_b->width == s.image_a.width && s.image_b->height == s.image_a.height);
    if (!b_ok || s.label.width() != s.image_a.width || s.label.height() != s.image_a.height) {
        throw std::invalid_argument("sample " + record.id + ": image and label dimensions differ");
    }
    return s;
}

ManifestRecord write_sample(const Sample& sample, const std::filesystem::path& dir, const std::string& split)
{
    ManifestRecord r;
    r.id = sample.id;
    r.split = split;
    r.image_a = sample.id + "_a.png";
    write_png(sample.image_a, dir / r.image_a);
    if (sample.image_b) {
        r.image_b = sample.id + "_b.png";
        write_png(*sample.image_b, dir / *r.image_b);
    }
    r.label = sample.id + ".flo";
    write_flo(sample.label, dir / r.label);
    return r;
}

FlowSpec sample_flow_spec(FlowKind kind, int size, const SynthOptions& options, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    FlowSpec spec;
    spec.kind = kind;
    spec.seed = seed;
    const double angle = uniform(rng, 0.0, 2 * std::numbers::pi);
    spec.cx = uniform(rng, 0.25 * size, 0.75 * size);
    spec.cy = uniform(rng, 0.25 * size, 0.75 * size);
    switch (kind) {
    case FlowKind::Translate: {
        const double mag = uniform(rng, options.translate_min, options.translate_max);
        spec.u0 = mag * std::cos(angle);
        spec.v0 = mag * std::sin(angle);
        break;
    }
    case FlowKind::Rotate: {
        const double far_x = std::max(spec.cx, size - 1 - spec.cx);
        const double far_y = std::max(spec.cy, size - 1 - spec.cy);
        const double peak = uniform(rng, options.rotate_min, options.rotate_max);
        spec.omega = peak / std::hypot(far_x, far_y) * (angle < std::numbers::pi ? 1.0 : -1.0);
        break;
    }
    case FlowKind::Vortex:
        spec.core_radius = uniform(rng, size / 8.0, size / 4.0);
        spec.strength = uniform(rng, options.vortex_min, options.vortex_max);
        break;
    case FlowKind::Mixed: {
        spec.core_radius = uniform(rng, size / 8.0, size / 4.0);
        spec.strength = uniform(rng, 0.5 * options.vortex_min, 0.5 * options.vortex_max);
        const double mag = uniform(rng, 0.5 * options.translate_min, 0.5 * options.translate_max);
        spec.u0 = mag * std::cos(angle);
        spec.v0 = mag * std::sin(angle);
        break;
    }
    }
    return spec;
}

Manifest build_synthetic_dataset(const std::filesystem::path& out_dir, int count, double split_frac, int size,
                                 const SynthOptions& options, std::uint64_t seed)
{
    if (size <= 0 || size % 64 != 0) throw std::invalid_argument("build_synthetic_dataset: size must be a positive multiple of 64");
    if (count < 1) throw std::invalid_argument("build_synthetic_dataset: count must be >= 1");
    if (!(split_frac >= 0 && split_frac <= 1)) throw std::invalid_argument("build_synthetic_dataset: split_frac must be in [0, 1]");
    if (options.kinds.empty()) throw std::invalid_argument("build_synthetic_dataset: no flow kinds");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir)) {
        throw FormatError("build_synthetic_dataset: cannot create " + out_dir.string());
    }

    const int train_count = static_cast<int>(std::lround(count * split_frac));
    std::seed_seq seq{seed};
    std::vector<std::uint64_t> seeds(2 * static_cast<std::size_t>(count));
    {
        std::vector<std::uint32_t> raw(seeds.size() * 2);
        seq.generate(raw.begin(), raw.end());
        for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = (std::uint64_t(raw[2 * i]) << 32) | raw[2 * i + 1];
    }

    Manifest m;
    m.root = out_dir;
    for (int i = 0; i < count; ++i) {
        const FlowKind kind = options.kinds[static_cast<std::size_t>(i) % options.kinds.size()];
        const FlowSpec spec = sample_flow_spec(kind, size, options, seeds[2 * i]);
        Sample s;
        char id[32];
        std::snprintf(id, sizeof(id), "s%05d", i);
        s.id = id;
        s.image_a = generate_texture(size, size, seeds[2 * i + 1], options.octaves);
        s.label = analytic_flow(spec, size, size);
        s.image_b = warp_image(s.image_a, s.label);
        m.records.push_back(write_sample(s, out_dir, i < train_count ? "train" : "test"));
    }
    write_manifest(m, out_dir / "manifest.json");
    return m;
}

Tensor<float> make_input(std::span<const Sample* const> batch, InputMode mode)
{
    if (batch.empty()) throw std::invalid_argument("make_input: empty batch");
    const int w = batch[0]->image_a.width, h = batch[0]->image_a.height;
    const Index channels = mode == InputMode::Paired ? 6 : 3;
    const Index plane = static_cast<Index>(w) * h;
    ArrayX<float> data(static_cast<Index>(batch.size()) * channels * plane);
    for (std::size_t n = 0; n < batch.size(); ++n) {
        const Sample& s = *batch[n];
        if (mode == InputMode::Paired && !s.image_b) throw std::invalid_argument("make_input: sample " + s.id + " has no second image");
        const RasterImage* images[] = {&s.image_a, mode == InputMode::Paired ? &*s.image_b : nullptr};
        for (int k = 0; k < (mode == InputMode::Paired ? 2 : 1); ++k) {
            const RasterImage& img = *images[k];
            if (img.width != w || img.height != h) throw std::invalid_argument("make_input: image size mismatch in batch");
            for (int c = 0; c < 3; ++c) {
                const int src = img.channels == 3 ? c : 0;
                float* dst = data.data() + (static_cast<Index>(n) * channels + 3 * k + c) * plane;
                for (int y = 0; y < h; ++y) {
                    for (int x = 0; x < w; ++x) dst[y * w + x] = img.at(x, y, src) / 255.0f - 0.5f;
                }
            }
        }
    }
    return Tensor<float>({static_cast<Index>(batch.size()), channels, h, w}, std::move(data));
}

Batch load_batch(const Manifest& manifest, std::span<const std::string> ids, InputMode mode)
{
    std::vector<Sample> samples;
    for (const auto& id : ids) samples.push_back(load_sample(manifest, manifest.find(id)));
    std::vector<const Sample*> ptrs;
    for (const auto& s : samples) ptrs.push_back(&s);
    Batch batch{make_input(ptrs, mode), {}};
    for (auto& s : samples) batch.labels.push_back(std::move(s.label));
    return batch;
}

} // namespace cmw

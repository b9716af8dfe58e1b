// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. CMW_CLI points at the command-line binary.

#include "cmw/adam.hpp"
#include "cmw/checkpoint.hpp"
#include "cmw/gradient_suite.hpp"
#include "cmw/io.hpp"
#include "cmw/trainer.hpp"
#include "cmw/visualize.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>

using namespace cmw;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kGradSuiteSeconds = 120.0;
constexpr double kLossTolerance = 1e-12;
constexpr double kTrainEpeLimit = 0.5;
constexpr double kTrainBaselineFraction = 0.25;
constexpr double kTrainSeconds = 30 * 60.0;
constexpr double kSingleModeGain = 2.0;
constexpr double kLabelErrorLimit = 0.5;
constexpr double kHueTolerance = 1e-3; // degrees
constexpr double kSaturationTolerance = 1e-5;
constexpr double kAdamTolerance = 1e-12;
constexpr double kBenchRatioTolerance = 1e-9;

int failures = 0;

void report(int id, bool pass, const std::string& detail)
{
    std::printf("%s %2d  %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

template <typename F>
void criterion(int id, F&& body)
{
    try {
        body();
    } catch (const std::exception& e) {
        report(id, false, std::string("exception: ") + e.what());
    }
}

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<char> slurp(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + p.string());
    return {std::istreambuf_iterator<char>(is), {}};
}

json read_json(const fs::path& p)
{
    std::ifstream is(p);
    return json::parse(is);
}

fs::path scratch(const std::string& name)
{
    const auto p = fs::temp_directory_path() / ("cmw_acceptance_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void run_cli(const std::string& args)
{
    const std::string cmd = std::string(CMW_CLI) + " " + args + " > /dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) throw std::runtime_error("command failed: " + cmd);
}

void gradient_suite()
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto results = run_gradient_suite(1, true);
    const double secs = seconds_since(t0);
    double worst = 0;
    std::string worst_name;
    for (const auto& r : results) {
        if (!(r.max_rel_error <= worst)) {
            worst = r.max_rel_error;
            worst_name = r.name;
        }
    }
    const bool has_network = std::any_of(results.begin(), results.end(), [](const auto& r) {
        return r.name.find("network") != std::string::npos;
    });
    report(1, has_network && worst < kGradTolerance && secs < kGradSuiteSeconds,
           fmt("gradient suite: %zu checks, worst rel. error %.2e (%s), %.1f s", results.size(), worst,
               worst_name.c_str(), secs));
}

void shape_contract()
{
    ModelConfig big;
    big.width = big.height = 512;
    const auto params = build_model<float>(big);
    const auto input = Tensor<float>::zeros({1, 6, 512, 512});
    const auto pred = forward(params, big, input);
    const auto field = infer(params, big, input);
    bool ok = pred.finest().shape() == Shape{1, 2, 128, 128} && field.width() == 512 && field.height() == 512;

    ModelConfig small;
    const auto p64 = build_model<float>(small);
    const auto ladder = forward(p64, small, Tensor<float>::zeros({1, 6, 64, 64}));
    const Index side[] = {1, 2, 4, 8, 16};
    for (int i = 0; i < 5; ++i) ok = ok && ladder.flows[i].shape() == Shape{1, 2, side[i], side[i]};
    report(2, ok, "512x512 -> 128x128 finest, 512x512 field; 64x64 -> {1,2,4,8,16}^2");
}

void loss_arithmetic()
{
    const double L = std::sqrt(2.0 * 2.0 + 1.5 * 1.5 + kEpeEpsilon);
    Tensor<double> gt = Tensor<double>::zeros({2, 2, 64, 64});
    for (Index n = 0; n < 2; ++n) {
        gt.data().segment((2 * n) * 4096, 4096).setConstant(2.0);
        gt.data().segment((2 * n + 1) * 4096, 4096).setConstant(1.5);
    }
    MultiScalePrediction<double> zero;
    const Index side[] = {1, 2, 4, 8, 16};
    for (int i = 0; i < 5; ++i) zero.flows[i] = Tensor<double>::zeros({2, 2, side[i], side[i]});
    const double total = multiscale_loss(zero, gt_pyramid(gt)).item();
    const LossWeights w;
    const bool weights_ok = w.values == std::array<double, 5>{0.005, 0.01, 0.02, 0.08, 0.32};
    report(3, weights_ok && std::abs(total - 0.435 * L) < kLossTolerance,
           fmt("total %.15f vs 0.435 L = %.15f", total, 0.435 * L));
}

void desk_training()
{
    const auto dir = scratch("train");
    const auto t0 = std::chrono::steady_clock::now();
    const auto manifest = build_synthetic_dataset(dir, 220, 0.9, 64, {}, 7);
    const auto train_set = load_split(manifest, "train");
    const auto test_set = load_split(manifest, "test");

    ModelConfig model;
    model.base_width = 8;
    model.seed = 7;
    auto params = build_model<float>(model);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.lr_drop_epoch = 20;
    cfg.batch_size = 8;
    cfg.seed = 7;
    train(model, params, cfg, train_set);
    const auto eval = evaluate(params, model, test_set, InputMode::Paired);
    const double secs = seconds_since(t0);
    fs::remove_all(dir);
    const bool ok = train_set.size() == 198 && test_set.size() == 22 && eval.mean_epe < kTrainEpeLimit
                    && eval.mean_epe < kTrainBaselineFraction * eval.zero_flow_epe && secs < kTrainSeconds;
    report(4, ok,
           fmt("test EPE %.4f px, zero-flow %.4f px (%.1f%%), %.0f s", eval.mean_epe, eval.zero_flow_epe,
               100.0 * eval.mean_epe / eval.zero_flow_epe, secs));
}

// Streaks at angle theta move along 2 theta, so direction is a function of
// orientation alone (theta and theta + pi look the same).
std::vector<Sample> oriented_set(int count, std::uint64_t seed)
{
    std::vector<Sample> out;
    for (int i = 0; i < count; ++i) {
        const double theta = (i % 4) * std::numbers::pi / 4;
        Sample s;
        s.id = "o" + std::to_string(i);
        s.image_a = generate_oriented_texture(64, 64, seed + i, theta);
        s.label = FlowField::constant(64, 64, static_cast<float>(3 * std::cos(2 * theta)),
                                      static_cast<float>(3 * std::sin(2 * theta)));
        out.push_back(std::move(s));
    }
    return out;
}

void single_image_mode()
{
    ModelConfig model;
    model.in_channels = 3;
    model.seed = 3;

    auto params = build_model<float>(model);
    TrainConfig short_run;
    short_run.epochs = 5;
    short_run.lr_drop_epoch = 4;
    short_run.mode = InputMode::Single;
    short_run.seed = 3;
    short_run.batch_size = 32; // one full-set step per epoch
    const auto fixed = oriented_set(32, 100);
    const auto r = train(model, params, short_run, fixed);
    bool decreasing = r.epoch_loss.size() == 5;
    for (std::size_t i = 1; i < r.epoch_loss.size(); ++i) decreasing = decreasing && r.epoch_loss[i] < r.epoch_loss[i - 1];

    const Sample* one[] = {&fixed.front()};
    const auto field = infer(params, model, make_input(one, InputMode::Single));
    const auto pred = forward(params, model, make_input(one, InputMode::Single));
    const bool shaped = field.width() == 64 && field.height() == 64 && pred.finest().shape() == Shape{1, 2, 16, 16};

    auto learned = build_model<float>(model);
    TrainConfig long_run = short_run;
    long_run.batch_size = 8;
    long_run.epochs = 20;
    long_run.lr_drop_epoch = 15;
    train(model, learned, long_run, oriented_set(128, 1000));
    const auto eval = evaluate(learned, model, oriented_set(32, 5000), InputMode::Single);
    const bool beats = eval.mean_epe * kSingleModeGain <= eval.zero_flow_epe;

    std::string losses;
    for (double l : r.epoch_loss) losses += fmt("%.4f ", l);
    report(5, decreasing && shaped && beats,
           fmt("5-epoch losses %s| test EPE %.4f vs zero-flow %.4f (%.1fx)", losses.c_str(), eval.mean_epe,
               eval.zero_flow_epe, eval.zero_flow_epe / eval.mean_epe));
}

void labeler_oracle()
{
    std::mt19937_64 rng(606);
    std::uniform_int_distribution<int> shift(-8, 8);
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = generate_texture(128, 128, rng());
        const auto truth = FlowField::constant(128, 128, static_cast<float>(shift(rng)), static_cast<float>(shift(rng)));
        const auto label = block_match_label(a, warp_image(a, truth));
        const double err = ((label.u - truth.u).square() + (label.v - truth.v).square()).sqrt().maxCoeff();
        worst = std::max(worst, err);
    }
    bool flat_raises = false;
    const auto flat = generate_texture(128, 128, 1, 0);
    try {
        block_match_label(flat, flat);
    } catch (const EmptyLabelError&) {
        flat_raises = true;
    }
    report(6, worst < kLabelErrorLimit && flat_raises,
           fmt("20 shifted pairs: worst per-pixel error %.2e px; flat imagery %s", worst,
               flat_raises ? "raises EmptyLabelError" : "did not raise"));
}

bool same_bits(const PlaneF& a, const PlaneF& b)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    for (Index i = 0; i < a.size(); ++i) {
        if (std::bit_cast<std::uint32_t>(a.data()[i]) != std::bit_cast<std::uint32_t>(b.data()[i])) return false;
    }
    return true;
}

void format_round_trips()
{
    const auto dir = scratch("formats");
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<int> side(1, 48);
    std::uniform_int_distribution<std::uint32_t> bits;
    int flo_ok = 0, ckpt_ok = 0;
    for (int i = 0; i < 100; ++i) {
        FlowField f(side(rng), side(rng));
        // Arbitrary finite bit patterns, subnormals and signed zeros included.
        auto finite = [&] {
            float x;
            do x = std::bit_cast<float>(bits(rng));
            while (!std::isfinite(x));
            return x;
        };
        for (Index k = 0; k < f.u.size(); ++k) {
            f.u.data()[k] = finite();
            f.v.data()[k] = finite();
        }
        write_flo(f, dir / "a.flo");
        const auto g = read_flo(dir / "a.flo");
        write_flo(g, dir / "b.flo");
        if (same_bits(f.u, g.u) && same_bits(f.v, g.v) && slurp(dir / "a.flo") == slurp(dir / "b.flo")) ++flo_ok;
    }
    for (int i = 0; i < 100; ++i) {
        ModelConfig cfg;
        cfg.in_channels = i % 2 ? 3 : 6;
        cfg.base_width = 1 + i % 3;
        cfg.height = 64 * (1 + i % 2);
        cfg.leaky_slope = static_cast<float>(i % 10) / 20.0f;
        cfg.seed = rng();
        auto params = build_model<float>(cfg);
        for (auto& [name, t] : params.entries()) {
            for (Index k = 0; k < t.numel(); k += 7) t.at(k) = std::bit_cast<float>(bits(rng));
        }
        save_checkpoint(params, cfg, dir / "a.ckpt");
        const auto [loaded, lcfg] = load_checkpoint(dir / "a.ckpt");
        bool ok = lcfg == cfg && loaded.size() == params.size();
        for (std::size_t k = 0; ok && k < params.size(); ++k) {
            const auto& x = params.entries()[k];
            const auto& y = loaded.entries()[k];
            ok = x.first == y.first && x.second.shape() == y.second.shape()
                 && std::memcmp(x.second.data().data(), y.second.data().data(), x.second.numel() * sizeof(float)) == 0;
        }
        save_checkpoint(loaded, lcfg, dir / "b.ckpt");
        if (ok && slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt")) ++ckpt_ok;
    }
    fs::remove_all(dir);
    report(7, flo_ok == 100 && ckpt_ok == 100, fmt(".flo %d/100, checkpoint %d/100 bit-exact", flo_ok, ckpt_ok));
}

void colorization()
{
    const auto white = colorize(FlowField(16, 16));
    const bool zero_white = std::all_of(white.pixels.begin(), white.pixels.end(), [](auto p) { return p == 255; });

    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 3.0);
    FlowField base(24, 24);
    for (Index k = 0; k < base.u.size(); ++k) {
        base.u.data()[k] = static_cast<float>(n(rng));
        base.v.data()[k] = static_cast<float>(n(rng));
    }
    const double ref = percentile_magnitude(base);
    double hue_err = 0, sat_err = 0, val_err = 0;
    for (int k = 0; k < 16; ++k) {
        const double phi = 2 * std::numbers::pi * k / 16 + 0.3;
        FlowField rot(24, 24);
        for (Index i = 0; i < base.u.size(); ++i) {
            const double u = base.u.data()[i], v = base.v.data()[i];
            rot.u.data()[i] = static_cast<float>(std::cos(phi) * u - std::sin(phi) * v);
            rot.v.data()[i] = static_cast<float>(std::sin(phi) * u + std::cos(phi) * v);
        }
        const double rot_ref = percentile_magnitude(rot);
        for (Index i = 0; i < base.u.size(); ++i) {
            const auto h0 = flow_to_hsv(base.u.data()[i], base.v.data()[i], ref);
            const auto h1 = flow_to_hsv(rot.u.data()[i], rot.v.data()[i], rot_ref);
            const double d = std::remainder(h1.hue - h0.hue - phi * 180 / std::numbers::pi, 360.0);
            hue_err = std::max(hue_err, std::abs(d));
            sat_err = std::max(sat_err, std::abs(h1.saturation - h0.saturation));
            val_err = std::max(val_err, std::abs(h1.value - h0.value));
        }
    }
    report(8, zero_white && hue_err < kHueTolerance && sat_err < kSaturationTolerance && val_err == 0,
           fmt("zero flow %s; 16 rotations: hue error %.2e deg, saturation %.2e, value %.1e",
               zero_white ? "white" : "NOT white", hue_err, sat_err, val_err));
}

void adam_oracle()
{
    using D = Tensor<double>;
    const double lr = 1e-3, eps = 1e-8;
    auto step = [](D& theta, AdamState<double>& st, const D& g) {
        backward(reduce_sum(theta * g));
        std::vector<D> p = {theta};
        adam_step<double>(p, st);
    };

    // One step: bias correction makes m_hat = g and v_hat = g^2.
    D theta = D::from_values({3}, {0.0, 0.0, 0.0}, true);
    AdamState<double> st;
    const D g = D::from_values({3}, {1.0, -2.0, 0.25});
    step(theta, st, g);
    double err1 = 0;
    for (Index i = 0; i < 3; ++i) err1 = std::max(err1, std::abs(theta.at(i) + lr * g.at(i) / (std::abs(g.at(i)) + eps)));

    // Two equal gradients: m_hat = g, v_hat = g^2 again, so the step repeats.
    // Gradients +1 then -1: m_hat = -1/3, v_hat = 1.
    D same = D::from_values({1}, {0.0}, true), flip = D::from_values({1}, {0.0}, true);
    AdamState<double> s_same, s_flip;
    step(same, s_same, D::scalar(2.0));
    step(same, s_same, D::scalar(2.0));
    step(flip, s_flip, D::scalar(1.0));
    step(flip, s_flip, D::scalar(-1.0));
    const double err2 = std::max(std::abs(same.at(0) + 2 * lr * 2.0 / (2.0 + eps)),
                                 std::abs(flip.at(0) + 2 * lr / (3 * (1 + eps))));
    report(9, err1 < kAdamTolerance && err2 < kAdamTolerance,
           fmt("one-step error %.1e, two-step error %.1e (beta1 0.5, beta2 0.999)", err1, err2));
}

void pipeline(const fs::path& root)
{
    const std::string r = root.string();
    run_cli("synth --out " + r + "/data --count 24 --size 64 --split 0.75 --seed 5");
    run_cli("label --data " + r + "/data --out " + r + "/labels");
    run_cli("train --data " + r + "/labels --out " + r + "/run --base-width 4 --epochs 4 --lr-drop-epoch 3 "
            "--checkpoint-every 2 --seed 5");
    run_cli("eval --checkpoint " + r + "/run/model.ckpt --data " + r + "/labels --out " + r + "/eval.json");
}

void determinism()
{
    const auto a = scratch("pipeline_a"), b = scratch("pipeline_b");
    pipeline(a);
    pipeline(b);
    int compared = 0, differing = 0;
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const auto rel = fs::relative(entry.path(), a);
        const auto other = b / rel;
        ++compared;
        if (rel == fs::path("run/train_report.json")) {
            auto ja = read_json(entry.path()), jb = read_json(other);
            ja.erase("epoch_seconds");
            jb.erase("epoch_seconds");
            if (ja != jb) ++differing;
        } else if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) {
            ++differing;
        }
    }
    const bool has_outputs = fs::exists(a / "run/model.ckpt") && fs::exists(a / "eval.json")
                             && fs::exists(a / "run/checkpoints/epoch_004.ckpt") && fs::exists(a / "labels/manifest.json");
    fs::remove_all(a);
    fs::remove_all(b);
    report(10, has_outputs && compared > 0 && differing == 0,
           fmt("synth -> label -> train -> eval twice: %d files compared, %d differ", compared, differing));
}

void bench_report()
{
    const auto dir = scratch("bench");
    run_cli("bench --size 512 --reps 2 --out " + (dir / "bench.json").string());
    const auto j = read_json(dir / "bench.json");
    fs::remove_all(dir);
    const auto inf = j.at("inference_seconds").get<std::vector<double>>();
    const auto lab = j.at("labeler_seconds").get<std::vector<double>>();
    const double mi = j.at("inference_mean_seconds"), ml = j.at("labeler_mean_seconds");
    const double ratio = j.at("labeler_to_inference_ratio");
    auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
    const bool ok = j.at("size") == 512 && inf.size() == 2 && lab.size() == 2
                    && std::all_of(inf.begin(), inf.end(), [](double t) { return t > 0; })
                    && std::all_of(lab.begin(), lab.end(), [](double t) { return t > 0; })
                    && std::abs(mi - mean(inf)) <= kBenchRatioTolerance * mi
                    && std::abs(ml - mean(lab)) <= kBenchRatioTolerance * ml
                    && std::abs(ratio - ml / mi) <= kBenchRatioTolerance * ratio;
    report(11, ok, fmt("512x512: inference %.3f s, labeler %.3f s, labeler/inference %.2f", mi, ml, ratio));
}

} // namespace

int main()
{
    criterion(1, gradient_suite);
    criterion(2, shape_contract);
    criterion(3, loss_arithmetic);
    criterion(4, desk_training);
    criterion(5, single_image_mode);
    criterion(6, labeler_oracle);
    criterion(7, format_round_trips);
    criterion(8, colorization);
    criterion(9, adam_oracle);
    criterion(10, determinism);
    criterion(11, bench_report);
    std::printf("%d of 11 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}

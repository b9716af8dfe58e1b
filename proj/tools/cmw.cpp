// Command-line front end: dataset synthesis, labeling, training,
// evaluation, inference, visualization, gradient checks and timing.

#include "cmw/checkpoint.hpp"
#include "cmw/dataset.hpp"
#include "cmw/gradient_suite.hpp"
#include "cmw/io.hpp"
#include "cmw/trainer.hpp"
#include "cmw/visualize.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// JSON config: {"<subcommand>": {"<long-flag-name>": value, ...}, ...}.
/// Explicit flags win over config values.
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App*, bool, bool, std::string) const override { return {}; }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override
    {
        std::vector<CLI::ConfigItem> items;
        json doc;
        try {
            doc = json::parse(input);
        } catch (const json::exception& e) {
            throw CLI::ConversionError(std::string("config: ") + e.what());
        }
        if (!doc.is_object()) throw CLI::ConversionError("config: top level must be an object");
        for (const auto& [section, body] : doc.items()) {
            if (!body.is_object()) throw CLI::ConversionError("config: section '" + section + "' must be an object");
            for (const auto& [key, value] : body.items()) {
                CLI::ConfigItem item;
                item.parents = {section};
                item.name = key;
                if (value.is_array()) {
                    for (const auto& v : value) item.inputs.push_back(v.is_string() ? v.get<std::string>() : v.dump());
                } else if (value.is_boolean()) {
                    item.inputs = {value.get<bool>() ? "true" : "false"};
                } else {
                    item.inputs = {value.is_string() ? value.get<std::string>() : value.dump()};
                }
                items.push_back(std::move(item));
            }
        }
        return items;
    }
};

void emit(const json& report, const std::string& out)
{
    const std::string text = report.dump(2);
    if (out.empty()) {
        std::cout << text << "\n";
        return;
    }
    std::ofstream os(out);
    if (!os) throw cmw::FormatError("cannot write " + out);
    os << text << "\n";
}

fs::path manifest_path(const std::string& data)
{
    const fs::path p(data);
    return fs::is_directory(p) ? p / "manifest.json" : p;
}

cmw::InputMode parse_mode(const std::string& s)
{
    if (s == "paired") return cmw::InputMode::Paired;
    if (s == "single") return cmw::InputMode::Single;
    throw std::invalid_argument("mode must be 'paired' or 'single'");
}

cmw::InputMode mode_for(const cmw::ModelConfig& cfg)
{
    return cfg.in_channels == 6 ? cmw::InputMode::Paired : cmw::InputMode::Single;
}

void require_file(const std::string& path, const char* what)
{
    if (!fs::is_regular_file(path)) throw std::invalid_argument(std::string(what) + " not found: " + path);
}

struct SynthArgs {
    std::string out;
    int count = 220;
    int size = 64;
    double split = 0.9;
    std::uint64_t seed = 0;
    std::vector<std::string> kinds = {"translate", "rotate"};
    int octaves = 3;
};

struct LabelArgs {
    std::string data;
    std::string out;
    cmw::BlockMatchOptions opts;
};

struct TrainArgs {
    std::string data;
    std::string out;
    std::string mode = "paired";
    int base_width = 8;
    std::string report;
    cmw::TrainConfig cfg;
};

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string split = "test";
    std::string out;
};

struct InferArgs {
    std::string checkpoint;
    std::string image_a;
    std::string image_b;
    std::string out;
};

struct VizArgs {
    std::string flow;
    std::string mode = "color";
    std::string out;
    double scale = 5.0;
    double min_frac = 0.1;
    int stride = 16;
    double step = 0.5;
    int max_steps = 200;
    double mag_ref = 0;
};

struct BenchArgs {
    int size = 512;
    int reps = 3;
    int base_width = 8;
    std::string checkpoint;
    std::uint64_t seed = 0;
    std::string out;
};

int run_synth(const SynthArgs& a)
{
    cmw::SynthOptions opts;
    opts.kinds.clear();
    for (const auto& k : a.kinds) opts.kinds.push_back(cmw::parse_flow_kind(k));
    opts.octaves = a.octaves;
    const auto m = cmw::build_synthetic_dataset(a.out, a.count, a.split, a.size, opts, a.seed);
    emit({{"manifest", (fs::path(a.out) / "manifest.json").string()},
          {"train", m.split("train").size()},
          {"test", m.split("test").size()}},
         "");
    return 0;
}

int run_label(const LabelArgs& a)
{
    const auto src = cmw::read_manifest(manifest_path(a.data));
    const fs::path out(a.out);
    fs::create_directories(out);
    if (fs::equivalent(out, src.root)) throw std::invalid_argument("label: --out must differ from the dataset directory");
    cmw::Manifest labeled;
    labeled.root = out;
    for (const auto& r : src.records) {
        if (!r.image_b) throw std::invalid_argument("label: record " + r.id + " has no second image");
        const auto a_img = cmw::read_png(src.root / r.image_a);
        const auto b_img = cmw::read_png(src.root / *r.image_b);
        const auto label = cmw::block_match_label(a_img, b_img, a.opts);
        cmw::ManifestRecord rec = r;
        rec.label = r.id + ".flo";
        cmw::write_flo(label, out / rec.label);
        const auto rel = [&](const std::string& p) { return fs::relative(src.root / p, out).generic_string(); };
        rec.image_a = rel(r.image_a);
        rec.image_b = rel(*r.image_b);
        labeled.records.push_back(std::move(rec));
    }
    cmw::write_manifest(labeled, out / "manifest.json");
    emit({{"manifest", (out / "manifest.json").string()}, {"labeled", labeled.records.size()}}, "");
    return 0;
}

int run_train(TrainArgs a)
{
    a.cfg.mode = parse_mode(a.mode);
    a.cfg.validate();
    const auto manifest = cmw::read_manifest(manifest_path(a.data));
    const auto train_samples = cmw::load_split(manifest, "train");
    if (train_samples.empty()) throw std::invalid_argument("train: dataset has no train records");

    cmw::ModelConfig model;
    model.in_channels = a.cfg.mode == cmw::InputMode::Paired ? 6 : 3;
    model.base_width = a.base_width;
    model.width = train_samples.front().image_a.width;
    model.height = train_samples.front().image_a.height;
    model.seed = a.cfg.seed;
    model.validate();

    const fs::path out(a.out);
    fs::create_directories(out);
    a.cfg.checkpoint_dir = out / "checkpoints";
    auto params = cmw::build_model<float>(model);
    auto report = cmw::train(model, params, a.cfg, train_samples, [](int epoch, double loss, double lr) {
        std::fprintf(stderr, "epoch %d  loss %.6f  lr %g\n", epoch, loss, lr);
    });
    cmw::save_checkpoint(params, model, out / "model.ckpt");
    const auto test_samples = cmw::load_split(manifest, "test");
    if (!test_samples.empty()) report.test_mean_epe = cmw::evaluate(params, model, test_samples, a.cfg.mode).mean_epe;
    emit(report.to_json(), a.report.empty() ? (out / "train_report.json").string() : a.report);
    emit(report.to_json(), "");
    return 0;
}

int run_eval(const EvalArgs& a)
{
    require_file(a.checkpoint, "checkpoint");
    const auto [params, model] = cmw::load_checkpoint(a.checkpoint);
    const auto manifest = cmw::read_manifest(manifest_path(a.data));
    const auto report = cmw::evaluate(params, model, manifest, mode_for(model), a.split);
    emit(report.to_json(), a.out);
    return 0;
}

int run_infer(const InferArgs& a, cmw::InputMode mode)
{
    require_file(a.checkpoint, "checkpoint");
    require_file(a.image_a, "image");
    if (mode == cmw::InputMode::Paired) require_file(a.image_b, "second image");
    const auto [params, model] = cmw::load_checkpoint(a.checkpoint);
    if (mode_for(model) != mode) {
        throw std::invalid_argument("channel mismatch: checkpoint expects " + std::to_string(model.in_channels)
                                    + " input channels, " + (mode == cmw::InputMode::Paired ? "infer" : "infer-single")
                                    + " supplies " + (mode == cmw::InputMode::Paired ? "6" : "3"));
    }
    cmw::Sample s;
    s.image_a = cmw::read_png(a.image_a);
    if (mode == cmw::InputMode::Paired) s.image_b = cmw::read_png(a.image_b);
    if (s.image_a.width != model.width || s.image_a.height != model.height) {
        throw std::invalid_argument("image is " + std::to_string(s.image_a.width) + "x" + std::to_string(s.image_a.height)
                                    + ", checkpoint expects " + std::to_string(model.width) + "x"
                                    + std::to_string(model.height));
    }
    const cmw::Sample* batch[] = {&s};
    auto frozen = params.clone();
    frozen.set_requires_grad(false);
    const auto flow = cmw::infer(frozen, model, cmw::make_input(batch, mode));
    cmw::write_flo(flow, a.out);
    emit({{"flow", a.out}, {"width", flow.width()}, {"height", flow.height()}}, "");
    return 0;
}

int run_viz(const VizArgs& a)
{
    require_file(a.flow, "flow file");
    const auto flow = cmw::read_flo(a.flow);
    cmw::RasterImage img;
    if (a.mode == "color") {
        img = cmw::colorize(flow, a.mag_ref > 0 ? std::optional<double>(a.mag_ref) : std::nullopt);
    } else if (a.mode == "streamline") {
        img = cmw::render_streamlines(flow, a.stride, a.step, a.max_steps);
    } else if (a.mode == "arrows") {
        img = cmw::render_arrows(flow, a.stride, a.scale, a.min_frac);
    } else {
        throw std::invalid_argument("viz: --mode must be color, streamline or arrows");
    }
    cmw::write_png(img, a.out);
    emit({{"image", a.out}, {"mode", a.mode}}, "");
    return 0;
}

int run_gradcheck(std::uint64_t seed, bool skip_network)
{
    constexpr double kTolerance = 1e-4;
    json checks = json::array();
    double worst = 0;
    for (const auto& r : cmw::run_gradient_suite(seed, !skip_network)) {
        checks.push_back({{"name", r.name}, {"max_rel_error", r.max_rel_error}, {"coordinates", r.coordinates}});
        worst = std::max(worst, r.max_rel_error);
    }
    const bool pass = worst < kTolerance;
    emit({{"checks", checks}, {"max_rel_error", worst}, {"tolerance", kTolerance}, {"pass", pass}}, "");
    return pass ? 0 : 1;
}

int run_bench(const BenchArgs& a)
{
    if (a.reps < 1) throw std::invalid_argument("bench: --reps must be >= 1");
    cmw::ModelConfig model;
    cmw::ModelParams<float> params;
    if (!a.checkpoint.empty()) {
        require_file(a.checkpoint, "checkpoint");
        std::tie(params, model) = cmw::load_checkpoint(a.checkpoint);
        if (model.width != a.size || model.height != a.size) {
            model.width = model.height = a.size; // the network is fully convolutional
        }
    } else {
        model.base_width = a.base_width;
        model.width = model.height = a.size;
        model.seed = a.seed;
        params = cmw::build_model<float>(model);
    }
    model.validate();
    params.set_requires_grad(false);

    cmw::Sample s;
    s.image_a = cmw::generate_texture(a.size, a.size, a.seed);
    s.label = cmw::FlowField::constant(a.size, a.size, 3.0f, -2.0f);
    s.image_b = cmw::warp_image(s.image_a, s.label);
    const cmw::Sample* batch[] = {&s};
    const auto input = cmw::make_input(batch, mode_for(model));

    using clock = std::chrono::steady_clock;
    auto seconds = [](clock::time_point t0) { return std::chrono::duration<double>(clock::now() - t0).count(); };
    std::vector<double> infer_times, label_times;
    for (int i = 0; i < a.reps; ++i) {
        const auto t0 = clock::now();
        const auto flow = cmw::infer(params, model, input);
        infer_times.push_back(seconds(t0));
    }
    for (int i = 0; i < a.reps; ++i) {
        const auto t0 = clock::now();
        const auto flow = cmw::block_match_label(s.image_a, *s.image_b);
        label_times.push_back(seconds(t0));
    }
    const auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
    const double mi = mean(infer_times), ml = mean(label_times);
    emit({{"size", a.size},
          {"reps", a.reps},
          {"base_width", model.base_width},
          {"inference_seconds", infer_times},
          {"labeler_seconds", label_times},
          {"inference_mean_seconds", mi},
          {"labeler_mean_seconds", ml},
          {"labeler_to_inference_ratio", ml / mi}},
         a.out);
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Cloud motion wind fields from satellite-style imagery"};
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON config file; explicit flags override it");
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic paired dataset with exact labels");
    s->add_option("--out", synth.out, "Output directory")->required();
    s->add_option("--count", synth.count, "Number of samples")->check(CLI::PositiveNumber);
    s->add_option("--size", synth.size, "Image side in pixels (multiple of 64)");
    s->add_option("--split", synth.split, "Fraction of samples in the train split")->check(CLI::Range(0.0, 1.0));
    s->add_option("--seed", synth.seed, "Random seed");
    s->add_option("--kinds", synth.kinds, "Flow kinds to cycle through (translate, rotate, vortex, mixed)");
    s->add_option("--octaves", synth.octaves, "Texture octaves");

    LabelArgs label;
    auto* l = app.add_subcommand("label", "Pseudo-label image pairs by NCC block matching");
    l->add_option("--data", label.data, "Dataset directory or manifest")->required();
    l->add_option("--out", label.out, "Output directory for labels and manifest")->required();
    l->add_option("--block", label.opts.block, "Block size");
    l->add_option("--stride", label.opts.stride, "Block stride");
    l->add_option("--search", label.opts.search, "Search radius");
    l->add_option("--tau-var", label.opts.tau_var, "Minimum block variance on [0,1] intensities");
    l->add_option("--tau-ncc", label.opts.tau_ncc, "Minimum peak correlation");
    l->add_option("--sigma", label.opts.smooth_sigma, "Gaussian smoothing of the dense label");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train the network on a dataset's train split");
    t->add_option("--data", tr.data, "Dataset directory or manifest")->required();
    t->add_option("--out", tr.out, "Run directory (model.ckpt, checkpoints/, train_report.json)")->required();
    t->add_option("--mode", tr.mode, "paired or single");
    t->add_option("--base-width", tr.base_width, "Channel unit b")->check(CLI::PositiveNumber);
    t->add_option("--epochs", tr.cfg.epochs, "Epochs");
    t->add_option("--batch-size", tr.cfg.batch_size, "Mini-batch size");
    t->add_option("--lr", tr.cfg.lr_initial, "Initial learning rate");
    t->add_option("--lr-after", tr.cfg.lr_after, "Learning rate after the drop");
    t->add_option("--lr-drop-epoch", tr.cfg.lr_drop_epoch, "Last epoch at the initial rate");
    t->add_option("--beta1", tr.cfg.beta1, "Adam first-moment decay");
    t->add_option("--beta2", tr.cfg.beta2, "Adam second-moment decay");
    t->add_option("--checkpoint-every", tr.cfg.checkpoint_every, "Checkpoint cadence in epochs");
    t->add_option("--seed", tr.cfg.seed, "Random seed (init and shuffling)");
    t->add_option("--report", tr.report, "Report path (default <out>/train_report.json)");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Mean endpoint error of a checkpoint on a split");
    e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
    e->add_option("--data", ev.data, "Dataset directory or manifest")->required();
    e->add_option("--split", ev.split, "train or test");
    e->add_option("--out", ev.out, "Write the JSON report here instead of stdout");

    InferArgs inf;
    auto* i = app.add_subcommand("infer", "Predict a .flo from an image pair");
    i->add_option("--checkpoint", inf.checkpoint, "Checkpoint file")->required();
    i->add_option("--a", inf.image_a, "First image")->required();
    i->add_option("--b", inf.image_b, "Second image")->required();
    i->add_option("--out", inf.out, "Output .flo")->required();

    InferArgs inf1;
    auto* i1 = app.add_subcommand("infer-single", "Predict a .flo from one image");
    i1->add_option("--checkpoint", inf1.checkpoint, "Checkpoint file")->required();
    i1->add_option("--image", inf1.image_a, "Input image")->required();
    i1->add_option("--out", inf1.out, "Output .flo")->required();

    VizArgs viz;
    auto* v = app.add_subcommand("viz", "Render a .flo as color coding, streamlines or arrows");
    v->add_option("--flow", viz.flow, "Input .flo")->required();
    v->add_option("--mode", viz.mode, "color, streamline or arrows")->check(CLI::IsMember({"color", "streamline", "arrows"}));
    v->add_option("--out", viz.out, "Output PNG")->required();
    v->add_option("--scale", viz.scale, "Arrow length per pixel of displacement");
    v->add_option("--min-frac", viz.min_frac, "Drop arrows below this fraction of the 99th-percentile magnitude");
    v->add_option("--stride", viz.stride, "Seed / arrow grid spacing")->check(CLI::PositiveNumber);
    v->add_option("--step", viz.step, "Streamline integration step");
    v->add_option("--max-steps", viz.max_steps, "Streamline step limit");
    v->add_option("--mag-ref", viz.mag_ref, "Color saturation reference magnitude (default 99th percentile)");

    std::uint64_t gc_seed = 0;
    bool gc_skip_network = false;
    auto* g = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op and the full loss");
    g->add_option("--seed", gc_seed, "Random seed");
    g->add_flag("--skip-network", gc_skip_network, "Only the per-op checks");

    BenchArgs bench;
    auto* b = app.add_subcommand("bench", "Time network inference against the block-matching labeler");
    b->add_option("--size", bench.size, "Image side (multiple of 64)");
    b->add_option("--reps", bench.reps, "Repetitions of each")->check(CLI::PositiveNumber);
    b->add_option("--base-width", bench.base_width, "Channel unit b when no checkpoint is given");
    b->add_option("--checkpoint", bench.checkpoint, "Time this checkpoint instead of a fresh network");
    b->add_option("--seed", bench.seed, "Random seed");
    b->add_option("--out", bench.out, "Write the JSON report here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (s->parsed()) return run_synth(synth);
        if (l->parsed()) return run_label(label);
        if (t->parsed()) return run_train(tr);
        if (e->parsed()) return run_eval(ev);
        if (i->parsed()) return run_infer(inf, cmw::InputMode::Paired);
        if (i1->parsed()) return run_infer(inf1, cmw::InputMode::Single);
        if (v->parsed()) return run_viz(viz);
        if (g->parsed()) return run_gradcheck(gc_seed, gc_skip_network);
        if (b->parsed()) return run_bench(bench);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 1;
}

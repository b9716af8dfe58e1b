#include "cmw/checkpoint.hpp"
#include "cmw/trainer.hpp"

#include <doctest.h>

#include <filesystem>

using namespace cmw;
namespace fs = std::filesystem;

namespace {

std::vector<Sample> tiny_set(int count, std::uint64_t seed)
{
    std::vector<Sample> out;
    for (int i = 0; i < count; ++i) {
        Sample s;
        s.id = "t" + std::to_string(i);
        s.image_a = generate_texture(64, 64, seed + i);
        s.label = FlowField::constant(64, 64, 1.0f + 0.25f * (i % 4), -1.0f);
        s.image_b = warp_image(s.image_a, s.label);
        out.push_back(std::move(s));
    }
    return out;
}

ModelConfig small_model()
{
    ModelConfig m;
    m.base_width = 2;
    m.seed = 4;
    return m;
}

} // namespace

TEST_CASE("default schedule: 50 epochs at 1e-3 then 30 at 1e-4")
{
    const TrainConfig c;
    CHECK(c.epochs == 80);
    CHECK(c.batch_size == 8);
    CHECK(c.beta1 == 0.5);
    CHECK(c.beta2 == 0.999);
    for (int e = 1; e <= 80; ++e) CHECK(c.learning_rate(e) == (e <= 50 ? 1e-3 : 1e-4));
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("train config validation")
{
    TrainConfig c;
    c.lr_drop_epoch = 80;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.lr_initial = -1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("training is deterministic and reports per-epoch values")
{
    const auto data = tiny_set(10, 50);
    const auto model = small_model();
    TrainConfig c;
    c.epochs = 3;
    c.lr_drop_epoch = 2;
    c.batch_size = 4;
    c.seed = 11;

    auto p1 = build_model<float>(model);
    auto p2 = build_model<float>(model);
    int calls = 0;
    const auto r1 = train(model, p1, c, data, [&](int, double, double) { ++calls; });
    const auto r2 = train(model, p2, c, data);
    CHECK(calls == 3);
    REQUIRE(r1.epoch_loss.size() == 3);
    CHECK(r1.epoch_loss == r2.epoch_loss);
    CHECK(r1.epoch_lr == std::vector<double>{1e-3, 1e-3, 1e-4});
    CHECK(r1.to_json(false) == r2.to_json(false));
    CHECK_FALSE(r1.to_json(false).contains("epoch_seconds"));
    for (std::size_t i = 0; i < p1.size(); ++i) {
        CHECK((p1.entries()[i].second.data() == p2.entries()[i].second.data()).all());
    }
}

TEST_CASE("checkpoints follow the cadence and resume bit-exactly")
{
    const auto dir = fs::temp_directory_path() / "cmw_test_train_ckpt";
    fs::remove_all(dir);
    const auto data = tiny_set(6, 80);
    const auto model = small_model();
    TrainConfig c;
    c.epochs = 4;
    c.lr_drop_epoch = 3;
    c.checkpoint_every = 2;
    c.checkpoint_dir = dir;
    auto params = build_model<float>(model);
    train(model, params, c, data);
    CHECK(fs::exists(dir / "epoch_002.ckpt"));
    CHECK(fs::exists(dir / "epoch_004.ckpt"));
    CHECK_FALSE(fs::exists(dir / "epoch_001.ckpt"));

    const auto [loaded, cfg] = load_checkpoint(dir / "epoch_004.ckpt");
    CHECK(cfg == model);
    for (std::size_t i = 0; i < params.size(); ++i) {
        CHECK((loaded.entries()[i].second.data() == params.entries()[i].second.data()).all());
    }
    fs::remove_all(dir);
}

TEST_CASE("mode and channel count must agree")
{
    const auto data = tiny_set(2, 1);
    auto model = small_model();
    auto params = build_model<float>(model);
    TrainConfig c;
    c.epochs = 1;
    c.lr_drop_epoch = 0;
    c.mode = InputMode::Single;
    CHECK_THROWS_AS(train(model, params, c, data), std::invalid_argument);
}

TEST_CASE("evaluate reports the zero-flow baseline as mean label magnitude")
{
    const auto data = tiny_set(4, 9);
    const auto model = small_model();
    auto params = build_model<float>(model);
    for (auto& [name, t] : params.entries()) t.data().setZero();
    const auto r = evaluate(params, model, data, InputMode::Paired);
    REQUIRE(r.per_sample.size() == 4);
    double expected = 0;
    for (const auto& s : data) expected += s.label.magnitude().cast<double>().mean() / 4;
    CHECK(r.zero_flow_epe == doctest::Approx(expected));
    CHECK(r.mean_epe == doctest::Approx(expected)); // zero parameters predict zero flow
}

#include "cmw/trainer.hpp"

#include "cmw/adam.hpp"
#include "cmw/checkpoint.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace cmw {

void TrainConfig::validate() const
{
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (lr_drop_epoch < 0 || lr_drop_epoch >= epochs) {
        throw std::invalid_argument("TrainConfig: lr_drop_epoch must lie in [0, epochs)");
    }
    if (!(lr_initial > 0) || !(lr_after > 0)) throw std::invalid_argument("TrainConfig: learning rates must be positive");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("TrainConfig: betas must lie in [0, 1)");
    if (checkpoint_every < 1) throw std::invalid_argument("TrainConfig: checkpoint_every must be >= 1");
    weights.validate();
}

nlohmann::json TrainReport::to_json(bool with_timing) const
{
    nlohmann::json j;
    j["epoch_loss"] = epoch_loss;
    j["epoch_lr"] = epoch_lr;
    if (with_timing) j["epoch_seconds"] = epoch_seconds;
    j["test_mean_epe"] = test_mean_epe ? nlohmann::json(*test_mean_epe) : nlohmann::json(nullptr);
    return j;
}

nlohmann::json EvalReport::to_json() const
{
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& [id, e] : per_sample) samples.push_back({{"id", id}, {"epe", e}});
    return {{"mean_epe", mean_epe}, {"zero_flow_epe", zero_flow_epe}, {"count", per_sample.size()}, {"per_sample", samples}};
}

std::vector<Sample> load_split(const Manifest& manifest, const std::string& split)
{
    std::vector<Sample> out;
    for (const auto* r : manifest.split(split)) out.push_back(load_sample(manifest, *r));
    return out;
}

TrainReport train(const ModelConfig& model, ModelParams<float>& params, const TrainConfig& config,
                  const Manifest& manifest, const EpochCallback& on_epoch)
{
    const auto samples = load_split(manifest, "train");
    if (samples.empty()) throw std::invalid_argument("train: manifest has no train records");
    return train(model, params, config, samples, on_epoch);
}

TrainReport train(const ModelConfig& model, ModelParams<float>& params, const TrainConfig& config,
                  std::span<const Sample> samples, const EpochCallback& on_epoch)
{
    model.validate();
    config.validate();
    if (samples.empty()) throw std::invalid_argument("train: empty training split");
    const int expected_channels = config.mode == InputMode::Paired ? 6 : 3;
    if (model.in_channels != expected_channels) {
        throw std::invalid_argument("train: model expects " + std::to_string(model.in_channels)
                                    + " input channels but the input mode supplies " + std::to_string(expected_channels));
    }
    for (const auto& s : samples) {
        if (s.image_a.width != model.width || s.image_a.height != model.height) {
            throw std::invalid_argument("train: sample " + s.id + " does not match the model input size");
        }
    }
    if (!config.checkpoint_dir.empty()) std::filesystem::create_directories(config.checkpoint_dir);

    params.set_requires_grad(true);
    auto tensors = params.tensors();
    AdamState<float> adam;
    adam.beta1 = static_cast<float>(config.beta1);
    adam.beta2 = static_cast<float>(config.beta2);
    adam.epsilon = static_cast<float>(config.adam_epsilon);

    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainReport report;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        const double lr = config.learning_rate(epoch);
        adam.learning_rate = static_cast<float>(lr);
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0;
        for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(config.batch_size));
            std::vector<const Sample*> batch;
            std::vector<FlowField> labels;
            for (std::size_t i = first; i < last; ++i) {
                batch.push_back(&samples[order[i]]);
                labels.push_back(samples[order[i]].label);
            }
            const auto input = make_input(batch, config.mode);
            const auto pyramid = gt_pyramid(to_flow_tensor<float>(labels));
            const auto loss = multiscale_loss(forward(params, model, input), pyramid, config.weights);
            const double value = loss.item();
            if (!std::isfinite(value)) {
                throw TrainingDivergedError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at "
                                            + std::to_string(first));
            }
            backward(loss);
            adam_step(std::span<Tensor<float>>(tensors), adam);
            loss_sum += value * static_cast<double>(last - first);
        }

        const double mean_loss = loss_sum / static_cast<double>(order.size());
        report.epoch_loss.push_back(mean_loss);
        report.epoch_lr.push_back(lr);
        report.epoch_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
        if (!config.checkpoint_dir.empty() && (epoch % config.checkpoint_every == 0 || epoch == config.epochs)) {
            char name[32];
            std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch);
            save_checkpoint(params, model, config.checkpoint_dir / name);
        }
        if (on_epoch) on_epoch(epoch, mean_loss, lr);
    }
    return report;
}

EvalReport evaluate(const ModelParams<float>& params, const ModelConfig& model, const Manifest& manifest,
                    InputMode mode, const std::string& split)
{
    const auto samples = load_split(manifest, split);
    if (samples.empty()) throw std::invalid_argument("evaluate: split '" + split + "' is empty");
    return evaluate(params, model, samples, mode);
}

EvalReport evaluate(const ModelParams<float>& params, const ModelConfig& model, std::span<const Sample> samples,
                    InputMode mode)
{
    if (samples.empty()) throw std::invalid_argument("evaluate: empty split");
    const int expected_channels = mode == InputMode::Paired ? 6 : 3;
    if (model.in_channels != expected_channels) {
        throw std::invalid_argument("evaluate: model expects " + std::to_string(model.in_channels)
                                    + " input channels but the input mode supplies " + std::to_string(expected_channels));
    }
    auto frozen = params.clone();
    frozen.set_requires_grad(false);
    EvalReport report;
    double sum = 0, zero_sum = 0;
    constexpr std::size_t kChunk = 8;
    for (std::size_t first = 0; first < samples.size(); first += kChunk) {
        const std::size_t last = std::min(samples.size(), first + kChunk);
        std::vector<const Sample*> batch;
        for (std::size_t i = first; i < last; ++i) batch.push_back(&samples[i]);
        const auto fields = infer_batch(frozen, model, make_input(batch, mode));
        for (std::size_t i = first; i < last; ++i) {
            const auto& label = samples[i].label;
            const double e = eval_epe(fields[i - first], label);
            report.per_sample.emplace_back(samples[i].id, e);
            sum += e;
            zero_sum += eval_epe(FlowField(label.width(), label.height()), label);
        }
    }
    report.mean_epe = sum / static_cast<double>(samples.size());
    report.zero_flow_epe = zero_sum / static_cast<double>(samples.size());
    return report;
}

} // namespace cmw

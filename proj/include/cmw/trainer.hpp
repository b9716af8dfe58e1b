#pragma once

#include "cmw/dataset.hpp"
#include "cmw/flownet.hpp"
#include "cmw/loss.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace cmw {

/// Optimizer, schedule and loop settings. Epochs are 1-indexed: epochs
/// 1..lr_drop_epoch run at lr_initial, later ones at lr_after. There is
/// no augmentation switch; samples are used as stored.
struct TrainConfig {
    int epochs = 80;
    int batch_size = 8;
    double lr_initial = 1e-3;
    double lr_after = 1e-4;
    int lr_drop_epoch = 50;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::uint64_t seed = 0;
    InputMode mode = InputMode::Paired;
    LossWeights weights;
    int checkpoint_every = 10;
    std::filesystem::path checkpoint_dir; // empty: no checkpoints

    void validate() const;
    double learning_rate(int epoch) const { return epoch <= lr_drop_epoch ? lr_initial : lr_after; }
};

struct TrainReport {
    std::vector<double> epoch_loss;
    std::vector<double> epoch_lr;
    std::vector<double> epoch_seconds;
    std::optional<double> test_mean_epe;

    nlohmann::json to_json(bool with_timing = true) const;
};

class TrainingDivergedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using EpochCallback = std::function<void(int epoch, double loss, double lr)>;

/// Mini-batch Adam on the manifest's train split, updating `params` in
/// place. Batches are reshuffled every epoch from `config.seed`; the last
/// partial batch is kept.
TrainReport train(const ModelConfig& model, ModelParams<float>& params, const TrainConfig& config,
                  const Manifest& manifest, const EpochCallback& on_epoch = {});

/// Same loop over samples already in memory.
TrainReport train(const ModelConfig& model, ModelParams<float>& params, const TrainConfig& config,
                  std::span<const Sample> samples, const EpochCallback& on_epoch = {});

struct EvalReport {
    double mean_epe = 0;
    double zero_flow_epe = 0; // mean label magnitude
    std::vector<std::pair<std::string, double>> per_sample;

    nlohmann::json to_json() const;
};

/// Full-resolution EPE of `infer` against each label of the split.
EvalReport evaluate(const ModelParams<float>& params, const ModelConfig& model, const Manifest& manifest,
                    InputMode mode, const std::string& split = "test");

EvalReport evaluate(const ModelParams<float>& params, const ModelConfig& model, std::span<const Sample> samples,
                    InputMode mode);

std::vector<Sample> load_split(const Manifest& manifest, const std::string& split);

} // namespace cmw

#pragma once

#include "cmw/flow_field.hpp"
#include "cmw/ops.hpp"
#include "cmw/tensor.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cmw {

/// Architecture hyperparameters. H and W must be multiples of 64 so every
/// one of the six stride-2 stages divides evenly.
struct ModelConfig {
    int in_channels = 6; // 6 = image pair, 3 = single image
    int base_width = 8;  // channel unit b; the reference network uses 64
    int height = 64;
    int width = 64;
    float leaky_slope = 0.1f;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (in_channels != 3 && in_channels != 6) throw std::invalid_argument("ModelConfig: in_channels must be 3 or 6");
        if (base_width < 1) throw std::invalid_argument("ModelConfig: base_width must be >= 1");
        if (height <= 0 || width <= 0 || height % 64 != 0 || width % 64 != 0) {
            throw std::invalid_argument("ModelConfig: height and width must be positive multiples of 64");
        }
        if (!(leaky_slope >= 0.0f && leaky_slope < 1.0f)) throw std::invalid_argument("ModelConfig: leaky_slope must be in [0, 1)");
    }

    bool operator==(const ModelConfig&) const = default;
};

enum class LayerKind { Conv, Deconv };

struct LayerSpec {
    std::string name;
    LayerKind kind;
    int in_channels;
    int out_channels;
    int kernel;
    int stride;
    int pad;
};

/// The fixed layer table: contracting convolutions, then per refinement
/// level a flow predictor, a feature deconvolution and a flow upsampler.
inline std::vector<LayerSpec> layer_table(const ModelConfig& cfg)
{
    const int b = cfg.base_width;
    using K = LayerKind;
    std::vector<LayerSpec> t = {
        {"conv1", K::Conv, cfg.in_channels, b, 7, 2, 3},
        {"conv2", K::Conv, b, 2 * b, 5, 2, 2},
        {"conv3", K::Conv, 2 * b, 4 * b, 5, 2, 2},
        {"conv3_1", K::Conv, 4 * b, 4 * b, 3, 1, 1},
        {"conv4", K::Conv, 4 * b, 8 * b, 3, 2, 1},
        {"conv4_1", K::Conv, 8 * b, 8 * b, 3, 1, 1},
        {"conv5", K::Conv, 8 * b, 8 * b, 3, 2, 1},
        {"conv5_1", K::Conv, 8 * b, 8 * b, 3, 1, 1},
        {"conv6", K::Conv, 8 * b, 16 * b, 3, 2, 1},
        {"conv6_1", K::Conv, 16 * b, 16 * b, 3, 1, 1},
    };
    // Refinement levels 6..3: the concatenation entering level i is
    // skip(i) + deconv(i) + 2 flow channels.
    const int skip[] = {8 * b, 8 * b, 4 * b, 2 * b};    // conv5_1, conv4_1, conv3_1, conv2
    const int deconv_out[] = {8 * b, 4 * b, 2 * b, b};
    int features = 16 * b;
    for (int i = 0; i < 4; ++i) {
        const std::string level = std::to_string(6 - i);
        t.push_back({"predict_flow" + level, K::Conv, features, 2, 3, 1, 1});
        t.push_back({"upsample_flow" + level, K::Deconv, 2, 2, 4, 2, 1});
        t.push_back({"deconv" + std::to_string(5 - i), K::Deconv, features, deconv_out[i], 4, 2, 1});
        features = skip[i] + deconv_out[i] + 2;
    }
    t.push_back({"predict_flow2", K::Conv, features, 2, 3, 1, 1});
    return t;
}

/// Named parameter set in layer-table order.
template <typename Scalar>
class ModelParams {
public:
    using Entry = std::pair<std::string, Tensor<Scalar>>;

    void add(std::string name, Tensor<Scalar> t)
    {
        if (find(name)) throw std::invalid_argument("ModelParams: duplicate parameter " + name);
        entries_.emplace_back(std::move(name), std::move(t));
    }

    const Tensor<Scalar>* find(const std::string& name) const
    {
        for (const auto& [n, t] : entries_) {
            if (n == name) return &t;
        }
        return nullptr;
    }

    const Tensor<Scalar>& at(const std::string& name) const
    {
        if (const auto* t = find(name)) return *t;
        throw std::out_of_range("ModelParams: no parameter " + name);
    }

    Tensor<Scalar>& at(const std::string& name)
    {
        return const_cast<Tensor<Scalar>&>(std::as_const(*this).at(name));
    }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    Index parameter_count() const
    {
        Index n = 0;
        for (const auto& e : entries_) n += e.second.numel();
        return n;
    }

    /// Shallow handles onto the parameter tensors, for optimizers.
    std::vector<Tensor<Scalar>> tensors() const
    {
        std::vector<Tensor<Scalar>> out;
        for (const auto& e : entries_) out.push_back(e.second);
        return out;
    }

    void set_requires_grad(bool on)
    {
        for (auto& e : entries_) e.second.set_requires_grad(on);
    }

    template <typename Other>
    ModelParams<Other> cast() const
    {
        ModelParams<Other> out;
        for (const auto& [n, t] : entries_) out.add(n, t.template cast<Other>());
        return out;
    }

    ModelParams clone() const
    {
        ModelParams out;
        for (const auto& [n, t] : entries_) out.add(n, Tensor<Scalar>(t.shape(), t.data(), t.requires_grad()));
        return out;
    }

private:
    std::vector<Entry> entries_;
};

/// Five flow predictions ordered coarsest (stride 64) to finest (stride 4).
template <typename Scalar>
struct MultiScalePrediction {
    std::array<Tensor<Scalar>, 5> flows;

    const Tensor<Scalar>& finest() const { return flows.back(); }
};

inline constexpr std::array<int, 5> kPredictionStrides = {64, 32, 16, 8, 4};

/// Creates every layer of the table with He-normal (fan-in) weights and
/// zero biases drawn from a PRNG seeded with `config.seed`.
template <typename Scalar>
ModelParams<Scalar> build_model(const ModelConfig& config)
{
    config.validate();
    std::mt19937_64 rng(config.seed);
    ModelParams<Scalar> params;
    for (const auto& layer : layer_table(config)) {
        const Index k = layer.kernel;
        Shape wshape = layer.kind == LayerKind::Conv ? Shape{layer.out_channels, layer.in_channels, k, k}
                                                     : Shape{layer.in_channels, layer.out_channels, k, k};
        const double stddev = std::sqrt(2.0 / static_cast<double>(layer.in_channels * k * k));
        std::normal_distribution<double> normal(0.0, stddev);
        ArrayX<Scalar> w(shape_numel(wshape));
        for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<Scalar>(normal(rng));
        params.add(layer.name + ".weight", Tensor<Scalar>(std::move(wshape), std::move(w), true));
        params.add(layer.name + ".bias", Tensor<Scalar>::zeros({layer.out_channels}, true));
    }
    return params;
}

namespace detail {

template <typename Scalar>
Tensor<Scalar> apply_layer(const ModelParams<Scalar>& params, const LayerSpec& layer, const Tensor<Scalar>& x)
{
    const auto& w = params.at(layer.name + ".weight");
    const auto& b = params.at(layer.name + ".bias");
    return layer.kind == LayerKind::Conv ? conv2d(x, w, b, layer.stride, layer.pad)
                                         : conv_transpose2d(x, w, b, layer.stride, layer.pad);
}

} // namespace detail

/// Runs the encoder-decoder on a normalized N x C x H x W batch.
template <typename Scalar>
MultiScalePrediction<Scalar> forward(const ModelParams<Scalar>& params, const ModelConfig& config,
                                     const Tensor<Scalar>& input)
{
    config.validate();
    if (input.rank() != 4 || input.dim(1) != config.in_channels || input.dim(2) != config.height
        || input.dim(3) != config.width) {
        throw std::invalid_argument("forward: input " + shape_string(input.shape()) + " does not match config ("
                                    + std::to_string(config.in_channels) + "x" + std::to_string(config.height) + "x"
                                    + std::to_string(config.width) + ")");
    }
    const auto table = layer_table(config);
    const auto spec = [&](const std::string& name) -> const LayerSpec& {
        for (const auto& l : table) {
            if (l.name == name) return l;
        }
        throw std::out_of_range("forward: unknown layer " + name);
    };
    const Scalar slope = static_cast<Scalar>(config.leaky_slope);
    auto act = [&](const std::string& name, const Tensor<Scalar>& x) {
        return leaky_relu(detail::apply_layer(params, spec(name), x), slope);
    };
    auto linear = [&](const std::string& name, const Tensor<Scalar>& x) {
        return detail::apply_layer(params, spec(name), x);
    };

    const auto conv1 = act("conv1", input);
    const auto conv2 = act("conv2", conv1);
    const auto conv3_1 = act("conv3_1", act("conv3", conv2));
    const auto conv4_1 = act("conv4_1", act("conv4", conv3_1));
    const auto conv5_1 = act("conv5_1", act("conv5", conv4_1));
    const auto conv6_1 = act("conv6_1", act("conv6", conv5_1));

    MultiScalePrediction<Scalar> out;
    const Tensor<Scalar>* skips[] = {&conv5_1, &conv4_1, &conv3_1, &conv2};
    Tensor<Scalar> features = conv6_1;
    for (int i = 0; i < 4; ++i) {
        const std::string level = std::to_string(6 - i);
        out.flows[i] = linear("predict_flow" + level, features);
        const auto flow_up = linear("upsample_flow" + level, out.flows[i]);
        const auto deconv = act("deconv" + std::to_string(5 - i), features);
        features = concat_channels(*skips[i], deconv, std::optional<Tensor<Scalar>>(flow_up));
    }
    out.flows[4] = linear("predict_flow2", features);
    return out;
}

/// Converts the n-th item of a N x 2 x h x w flow tensor to a FlowField.
template <typename Scalar>
FlowField to_flow_field(const Tensor<Scalar>& flow, Index n = 0)
{
    if (flow.rank() != 4 || flow.dim(1) != 2) throw std::invalid_argument("to_flow_field: expected N x 2 x h x w");
    const Index h = flow.dim(2), w = flow.dim(3), plane = h * w;
    FlowField f(static_cast<int>(w), static_cast<int>(h));
    const Scalar* base = flow.data().data() + n * 2 * plane;
    for (Index i = 0; i < plane; ++i) {
        f.u.data()[i] = static_cast<float>(base[i]);
        f.v.data()[i] = static_cast<float>(base[plane + i]);
    }
    return f;
}

/// Stacks flow fields into an N x 2 x h x w tensor.
template <typename Scalar>
Tensor<Scalar> to_flow_tensor(std::span<const FlowField> fields)
{
    if (fields.empty()) throw std::invalid_argument("to_flow_tensor: empty batch");
    const Index h = fields[0].height(), w = fields[0].width(), plane = h * w;
    ArrayX<Scalar> data(static_cast<Index>(fields.size()) * 2 * plane);
    for (std::size_t n = 0; n < fields.size(); ++n) {
        if (!fields[n].same_size(fields[0])) throw std::invalid_argument("to_flow_tensor: size mismatch in batch");
        Scalar* dst = data.data() + static_cast<Index>(n) * 2 * plane;
        for (Index i = 0; i < plane; ++i) {
            dst[i] = static_cast<Scalar>(fields[n].u.data()[i]);
            dst[plane + i] = static_cast<Scalar>(fields[n].v.data()[i]);
        }
    }
    return Tensor<Scalar>({static_cast<Index>(fields.size()), 2, h, w}, std::move(data));
}

/// Full-resolution fields: the finest prediction replicated 4x per axis,
/// one FlowField per batch item.
template <typename Scalar>
std::vector<FlowField> infer_batch(const ModelParams<Scalar>& params, const ModelConfig& config,
                                   const Tensor<Scalar>& input)
{
    const auto pred = forward(params, config, input);
    std::vector<FlowField> out;
    for (Index n = 0; n < input.dim(0); ++n) out.push_back(upsample_nearest(to_flow_field(pred.finest(), n), 4));
    return out;
}

template <typename Scalar>
FlowField infer(const ModelParams<Scalar>& params, const ModelConfig& config, const Tensor<Scalar>& input)
{
    if (input.rank() != 4 || input.dim(0) != 1) throw std::invalid_argument("infer: expected a batch of one");
    return infer_batch(params, config, input).front();
}

} // namespace cmw

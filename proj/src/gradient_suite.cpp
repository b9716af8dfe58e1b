#include "cmw/gradient_suite.hpp"

#include "cmw/flownet.hpp"
#include "cmw/grad_check.hpp"
#include "cmw/loss.hpp"

#include <random>

namespace cmw {

namespace {

using T = Tensor<double>;

template <typename S = double>
Tensor<S> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    ArrayX<S> data(shape_numel(shape));
    for (Index i = 0; i < data.size(); ++i) data[i] = static_cast<S>(dist(rng));
    return Tensor<S>(std::move(shape), std::move(data));
}

template <typename S = double>
GradCheckResult check(std::string name, const std::function<Tensor<S>()>& f, std::vector<Tensor<S>> params,
                      S eps = S(1e-6))
{
    long coords = 0;
    for (const auto& p : params) coords += static_cast<long>(p.numel());
    const double err = static_cast<double>(grad_check<S>(f, std::span<Tensor<S>>(params), eps));
    return {std::move(name), err, coords};
}

} // namespace

std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed, bool include_network)
{
    std::mt19937_64 rng(seed);
    std::vector<GradCheckResult> results;

    {
        T x = random_tensor({2, 3, 8, 8}, rng), w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
        T r = random_tensor({2, 4, 4, 4}, rng);
        results.push_back(check<double>("conv2d", [&] { return reduce_sum(mul(conv2d(x, w, b, 2, 1), r)); }, {x, w, b}));
    }
    {
        T x = random_tensor({2, 3, 8, 8}, rng), w = random_tensor({3, 2, 4, 4}, rng), b = random_tensor({2}, rng);
        T r = random_tensor({2, 2, 16, 16}, rng);
        results.push_back(
            check<double>("conv_transpose2d", [&] { return reduce_sum(mul(conv_transpose2d(x, w, b, 2, 1), r)); }, {x, w, b}));
    }
    {
        T x = random_tensor({2, 3, 8, 8}, rng);
        T r = random_tensor(x.shape(), rng);
        results.push_back(check<double>("leaky_relu", [&] { return reduce_sum(mul(leaky_relu(x, 0.1), r)); }, {x}));
    }
    {
        T x = random_tensor({2, 3, 8, 8}, rng);
        T r = random_tensor({2, 3, 4, 4}, rng);
        results.push_back(check<double>("avg_pool2d", [&] { return reduce_sum(mul(avg_pool2d(x, 2), r)); }, {x}));
    }
    {
        T a = random_tensor({2, 2, 8, 8}, rng), b = random_tensor({2, 3, 8, 8}, rng), c = random_tensor({2, 2, 8, 8}, rng);
        T r = random_tensor({2, 7, 8, 8}, rng);
        results.push_back(check<double>("concat_channels",
                                [&] { return reduce_sum(mul(concat_channels(a, b, std::optional<T>(c)), r)); }, {a, b, c}));
    }
    {
        T pred = random_tensor({2, 2, 8, 8}, rng, -3, 3), gt = random_tensor({2, 2, 8, 8}, rng, -3, 3);
        results.push_back(check<double>("epe", [&] { return epe(pred, gt); }, {pred, gt}));
    }
    {
        T x = random_tensor({3, 5}, rng, 0.5, 2.0), y = random_tensor({3, 5}, rng);
        results.push_back(check<double>("elementwise",
                                [&] { return reduce_mean(add(mul(cmw::sqrt(square(x), 1e-8), y), scalar_mul(sub(x, y), 0.5))); },
                                {x, y}));
    }
    if (include_network) {
        // The deep layers of a width-1 network carry gradients near 1e-9,
        // below what double-precision central differences resolve (the loss
        // ulp divided by the step), so this check runs in extended precision.
        using L = long double;
        ModelConfig cfg;
        cfg.base_width = 1;
        cfg.seed = seed;
        auto params = build_model<L>(cfg);
        // Non-zero biases so every bias gradient path is exercised.
        for (auto& [name, t] : params.entries()) {
            if (name.ends_with(".bias")) t.data() = random_tensor<L>(t.shape(), rng, -0.1, 0.1).data();
        }
        const auto input = random_tensor<L>({1, 6, 64, 64}, rng, -0.5, 0.5);
        const auto pyramid = gt_pyramid(random_tensor<L>({1, 2, 64, 64}, rng, -3, 3));
        results.push_back(check<L>(
            "multiscale_loss(network b=1, 64x64)",
            [&] { return multiscale_loss(forward(params, cfg, input), pyramid); }, params.tensors()));
    }
    return results;
}

} // namespace cmw

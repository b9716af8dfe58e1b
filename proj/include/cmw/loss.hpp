#pragma once

#include "cmw/flow_field.hpp"
#include "cmw/flownet.hpp"
#include "cmw/ops.hpp"

#include <array>

namespace cmw {

inline constexpr double kEpeEpsilon = 1e-8;

/// Per-level loss weights, coarsest (stride 64) to finest (stride 4).
struct LossWeights {
    std::array<double, 5> values = {0.005, 0.01, 0.02, 0.08, 0.32};

    void validate() const
    {
        for (double w : values) {
            if (!(w >= 0.0)) throw std::invalid_argument("LossWeights: weights must be non-negative");
        }
    }
};

/// Mean endpoint error sqrt(du^2 + dv^2 + eps) over batch and pixels.
template <typename Scalar>
Tensor<Scalar> epe(const Tensor<Scalar>& pred, const Tensor<Scalar>& gt)
{
    if (pred.shape() != gt.shape() || pred.rank() != 4 || pred.dim(1) != 2) {
        throw std::invalid_argument("epe: shape mismatch " + shape_string(pred.shape()) + " vs " + shape_string(gt.shape()));
    }
    return reduce_mean(cmw::sqrt(sum_channels(square(pred - gt)), static_cast<Scalar>(kEpeEpsilon)));
}

/// Ground truth average-pooled to each prediction resolution, coarsest
/// first. Vector values stay in input-resolution pixel units.
template <typename Scalar>
std::array<Tensor<Scalar>, 5> gt_pyramid(const Tensor<Scalar>& gt)
{
    if (gt.rank() != 4 || gt.dim(1) != 2 || gt.dim(2) % 64 != 0 || gt.dim(3) % 64 != 0) {
        throw std::invalid_argument("gt_pyramid: expected N x 2 x H x W with H, W divisible by 64, got "
                                    + shape_string(gt.shape()));
    }
    std::array<Tensor<Scalar>, 5> out;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = avg_pool2d(gt, static_cast<Index>(kPredictionStrides[i]));
    return out;
}

template <typename Scalar>
Tensor<Scalar> multiscale_loss(const MultiScalePrediction<Scalar>& pred, const std::array<Tensor<Scalar>, 5>& pyramid,
                               const LossWeights& weights = {})
{
    weights.validate();
    Tensor<Scalar> total;
    for (std::size_t i = 0; i < 5; ++i) {
        if (pred.flows[i].shape() != pyramid[i].shape()) {
            throw std::invalid_argument("multiscale_loss: level " + std::to_string(i) + " shape mismatch "
                                        + shape_string(pred.flows[i].shape()) + " vs "
                                        + shape_string(pyramid[i].shape()));
        }
        auto term = scalar_mul(epe(pred.flows[i], pyramid[i]), static_cast<Scalar>(weights.values[i]));
        total = i == 0 ? term : total + term;
    }
    return total;
}

/// Plain mean endpoint error between two fields, no epsilon.
double eval_epe(const FlowField& pred, const FlowField& gt);

} // namespace cmw

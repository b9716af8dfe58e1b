#pragma once

#include "cmw/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace cmw {

template <typename Scalar>
struct AdamState {
    Scalar learning_rate = Scalar(1e-3);
    Scalar beta1 = Scalar(0.5);
    Scalar beta2 = Scalar(0.999);
    Scalar epsilon = Scalar(1e-8);
    std::int64_t step = 0;
    std::vector<ArrayX<Scalar>> m;
    std::vector<ArrayX<Scalar>> v;
};

/// One bias-corrected Adam update over `params`, then clears their grads.
/// Moment buffers are allocated on the first call.
template <typename Scalar>
void adam_step(std::span<Tensor<Scalar>> params, AdamState<Scalar>& state)
{
    if (!(state.beta1 >= 0 && state.beta1 < 1 && state.beta2 >= 0 && state.beta2 < 1)) {
        throw std::invalid_argument("adam_step: betas must lie in [0, 1)");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad()) {
            throw std::invalid_argument("adam_step: parameter " + std::to_string(i) + " has no gradient");
        }
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.push_back(ArrayX<Scalar>::Zero(p.numel()));
            state.v.push_back(ArrayX<Scalar>::Zero(p.numel()));
        }
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state does not match parameter set");

    state.step += 1;
    const Scalar c1 = Scalar(1) - std::pow(state.beta1, static_cast<Scalar>(state.step));
    const Scalar c2 = Scalar(1) - std::pow(state.beta2, static_cast<Scalar>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        const auto& g = p.grad();
        if (state.m[i].size() != p.numel()) throw std::invalid_argument("adam_step: moment buffer shape mismatch");
        state.m[i] = state.beta1 * state.m[i] + (Scalar(1) - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (Scalar(1) - state.beta2) * g.square();
        p.data() -= state.learning_rate * (state.m[i] / c1) / ((state.v[i] / c2).sqrt() + state.epsilon);
        p.zero_grad();
    }
}

} // namespace cmw

#pragma once

#include "cmw/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>

namespace cmw {

/// Largest relative disagreement between reverse-mode gradients and
/// central differences, over every coordinate of `params`.
///
/// `f` is re-evaluated from scratch for each perturbation; the parameters
/// are perturbed in place and restored.
template <typename Scalar>
Scalar grad_check(const std::function<Tensor<Scalar>()>& f, std::span<Tensor<Scalar>> params, Scalar eps)
{
    if (!(eps > Scalar(0))) throw std::invalid_argument("grad_check: eps must be positive");
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    const Tensor<Scalar> loss = f();
    if (loss.numel() != 1) throw std::invalid_argument("grad_check: function must be scalar-valued");
    backward(loss);

    Scalar worst = 0;
    for (auto& p : params) {
        const ArrayX<Scalar> analytic = p.has_grad() ? p.grad() : ArrayX<Scalar>::Zero(p.numel());
        for (Index i = 0; i < p.numel(); ++i) {
            const Scalar saved = p.at(i);
            p.at(i) = saved + eps;
            const Scalar plus = f().item();
            p.at(i) = saved - eps;
            const Scalar minus = f().item();
            p.at(i) = saved;
            const Scalar numeric = (plus - minus) / (Scalar(2) * eps);
            const Scalar denom = std::max(Scalar(1e-12), std::abs(analytic[i]) + std::abs(numeric));
            worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
        }
    }
    return worst;
}

/// Single-input form: checks d f(x) / dx.
template <typename Scalar>
Scalar grad_check(const std::function<Tensor<Scalar>(const Tensor<Scalar>&)>& f, const Tensor<Scalar>& input, Scalar eps)
{
    Tensor<Scalar> x = input.detach();
    Tensor<Scalar> params[] = {x};
    return grad_check<Scalar>([&] { return f(x); }, std::span<Tensor<Scalar>>(params), eps);
}

} // namespace cmw

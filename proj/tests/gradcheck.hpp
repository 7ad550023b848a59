#pragma once

// Central finite-difference oracle for adjoint verification. Stays on the
// tensor/value side only, so it is independent of the backward pass it checks.

#include <cmath>
#include <functional>
#include <vector>

#include "diffgen/autodiff.hpp"
#include "diffgen/rng.hpp"

namespace diffgen::testing {

template <typename S>
TensorT<S> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    TensorT<S> t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.normal() * scale);
    return t;
}

/// Max relative error between the adjoint-computed gradients of `build`
/// w.r.t. every listed input and a central finite difference of the scalar
/// sum(output * seed_weights).
template <typename S, typename BuildFn>
double gradcheck_max_rel_err(std::vector<VarT<S>> inputs, BuildFn&& build, Rng& rng, S step) {
    VarT<S> out = build(inputs);
    TensorT<S> seed(out->value.shape());
    for (std::size_t i = 0; i < seed.numel(); ++i) seed[i] = static_cast<S>(rng.normal());

    for (auto& in : inputs) in->ensure_grad().fill(S(0));
    backward_grad(out, seed);

    auto weighted_sum = [&]() {
        TensorT<S> v = build(inputs)->value;
        double s = 0;
        for (std::size_t i = 0; i < v.numel(); ++i) s += static_cast<double>(v[i]) * static_cast<double>(seed[i]);
        return s;
    };

    double max_abs_diff = 0, max_abs_fd = 0;
    for (auto& in : inputs) {
        if (!in->requires_grad) continue;
        for (std::size_t i = 0; i < in->value.numel(); ++i) {
            const S saved = in->value[i];
            in->value[i] = saved + step;
            const double fp = weighted_sum();
            in->value[i] = saved - step;
            const double fm = weighted_sum();
            in->value[i] = saved;
            const double fd = (fp - fm) / (2.0 * static_cast<double>(step));
            const double ad = static_cast<double>(in->grad[i]);
            max_abs_diff = std::max(max_abs_diff, std::abs(ad - fd));
            max_abs_fd = std::max(max_abs_fd, std::abs(fd));
        }
    }
    if (max_abs_fd < 1e-12) return max_abs_diff < 1e-12 ? 0.0 : 1.0;
    return max_abs_diff / max_abs_fd;
}

}  // namespace diffgen::testing

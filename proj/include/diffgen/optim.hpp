#pragma once

#include <stdexcept>
#include <vector>

#include "diffgen/autodiff.hpp"
#include "diffgen/tensor.hpp"

namespace diffgen {

template <typename S>
struct AdamWConfigT {
    S lr = S(1e-3);
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S eps = S(1e-8);
    S weight_decay = S(0.01);

    void validate() const {
        if (!(lr >= S(0)) || !(beta1 > S(0) && beta1 < S(1)) || !(beta2 > S(0) && beta2 < S(1)) || !(eps > S(0)) ||
            !(weight_decay >= S(0)))
            throw std::invalid_argument("adamw: invalid hyperparameters");
    }
};

using AdamWConfig = AdamWConfigT<float>;

/// Decoupled weight decay Adam. Moments are zero-initialized and the step
/// counter advances by exactly one per accepted step; non-finite gradients
/// reject the step before any state is touched.
template <typename S>
class AdamWT {
public:
    AdamWT(AdamWConfigT<S> cfg, const std::vector<VarT<S>>& params) : cfg_(cfg), params_(params) {
        cfg_.validate();
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const auto& p : params) {
            m_.push_back(TensorT<S>::zeros(p->value.shape()));
            v_.push_back(TensorT<S>::zeros(p->value.shape()));
        }
    }

    std::int64_t step_count() const { return t_; }

    void step() {
        for (const auto& p : params_) {
            if (p->grad.numel() != p->value.numel())
                throw std::runtime_error("adamw: missing gradient for " + p->name);
            if (!p->grad.all_finite()) throw std::runtime_error("adamw: non-finite gradient for " + p->name);
        }
        ++t_;
        const S bc1 = S(1) - std::pow(cfg_.beta1, static_cast<S>(t_));
        const S bc2 = S(1) - std::pow(cfg_.beta2, static_cast<S>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& theta = params_[i]->value;
            const auto& g = params_[i]->grad;
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < theta.numel(); ++j) {
                m[j] = cfg_.beta1 * m[j] + (S(1) - cfg_.beta1) * g[j];
                v[j] = cfg_.beta2 * v[j] + (S(1) - cfg_.beta2) * g[j] * g[j];
                const S mhat = m[j] / bc1;
                const S vhat = v[j] / bc2;
                theta[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * theta[j]);
            }
        }
    }

private:
    AdamWConfigT<S> cfg_;
    std::vector<VarT<S>> params_;
    std::vector<TensorT<S>> m_, v_;
    std::int64_t t_ = 0;
};

using AdamW = AdamWT<float>;

/// Single-tensor update used by the optimizer contract tests: advances the
/// (m, v, t) state in place and returns the updated parameters.
template <typename S>
TensorT<S> adamw_step(const TensorT<S>& theta, const TensorT<S>& grad, TensorT<S>& m, TensorT<S>& v, std::int64_t& t,
                      const AdamWConfigT<S>& cfg) {
    cfg.validate();
    if (!theta.same_shape(grad)) throw std::invalid_argument("adamw_step: grad shape mismatch");
    if (!grad.all_finite()) throw std::runtime_error("adamw_step: non-finite gradient");
    ++t;
    const S bc1 = S(1) - std::pow(cfg.beta1, static_cast<S>(t));
    const S bc2 = S(1) - std::pow(cfg.beta2, static_cast<S>(t));
    TensorT<S> out = theta;
    for (std::size_t j = 0; j < theta.numel(); ++j) {
        m[j] = cfg.beta1 * m[j] + (S(1) - cfg.beta1) * grad[j];
        v[j] = cfg.beta2 * v[j] + (S(1) - cfg.beta2) * grad[j] * grad[j];
        const S mhat = m[j] / bc1;
        const S vhat = v[j] / bc2;
        out[j] = theta[j] - cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * theta[j]);
    }
    return out;
}

}  // namespace diffgen

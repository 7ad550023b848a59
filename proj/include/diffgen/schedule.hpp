#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "diffgen/rng.hpp"
#include "diffgen/tensor.hpp"

namespace diffgen {

/// The beta/alpha/alpha-bar sequences governing the diffusion chain.
/// Timesteps are 1-indexed (t in 1..T) at every interface; storage is kept
/// in double regardless of the working precision.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // beta[t-1] = beta_t
    std::vector<double> alpha;      // 1 - beta_t
    std::vector<double> alpha_bar;  // prod_{s<=t} alpha_s
    double beta_start = 0.0;
    double beta_end = 0.0;
    std::string kind = "linear";

    double beta_at(int t) const { return beta.at(check_t(t) - 1); }
    double alpha_at(int t) const { return alpha.at(check_t(t) - 1); }
    double alpha_bar_at(int t) const { return alpha_bar.at(check_t(t) - 1); }

    int check_t(int t) const {
        if (t < 1 || t > T) throw std::out_of_range("timestep " + std::to_string(t) + " outside 1.." + std::to_string(T));
        return t;
    }
};

/// Linearly interpolated beta from beta_start (t=1) to beta_end (t=T).
NoiseSchedule linear_beta_schedule(int T, double beta_start = 1e-4, double beta_end = 0.02);

/// One forward Markov step: sqrt(1-beta_t) x_prev + sqrt(beta_t) z, z ~ N(0,I).
template <typename S>
TensorT<S> forward_step_sample(const TensorT<S>& x_prev, int t, const NoiseSchedule& sched, Rng& rng) {
    const double b = sched.beta_at(t);
    const S keep = static_cast<S>(std::sqrt(1.0 - b));
    const S noise = static_cast<S>(std::sqrt(b));
    TensorT<S> out(x_prev.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = keep * x_prev[i] + noise * static_cast<S>(rng.normal());
    return out;
}

/// Closed-form marginal: sqrt(abar_t) x0 + sqrt(1-abar_t) eps.
template <typename S>
TensorT<S> q_sample(const TensorT<S>& x0, int t, const TensorT<S>& eps, const NoiseSchedule& sched) {
    if (!x0.same_shape(eps))
        throw std::invalid_argument("q_sample: eps shape " + shape_str(eps.shape()) + " != x0 shape " +
                                    shape_str(x0.shape()));
    const double ab = sched.alpha_bar_at(t);
    const S sig = static_cast<S>(std::sqrt(ab));
    const S noi = static_cast<S>(std::sqrt(1.0 - ab));
    TensorT<S> out(x0.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = sig * x0[i] + noi * eps[i];
    return out;
}

}  // namespace diffgen

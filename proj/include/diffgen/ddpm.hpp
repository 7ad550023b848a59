#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "diffgen/checkpoint.hpp"
#include "diffgen/denoiser.hpp"
#include "diffgen/image.hpp"
#include "diffgen/optim.hpp"
#include "diffgen/schedule.hpp"

namespace diffgen {

/// Reverse-chain configuration. The posterior variance is fixed to
/// sigma_t^2 = beta_t (untrained); t = 1 adds no noise.
struct SamplerConfig {
    NoiseSchedule schedule;
    bool deterministic_final_step = true;
    bool force_zero_noise = false;  // verification hook: suppress noise at every step
    int batch = 64;                 // images per model invocation
};

struct DMTrainConfig {
    int epochs = 30;
    int batch_size = 16;
    AdamWConfig adamw{.lr = 1e-3f, .beta1 = 0.9f, .beta2 = 0.999f, .eps = 1e-8f, .weight_decay = 0.0f};
    std::uint64_t seed = 0;
    int checkpoint_every = 0;              // epochs between checkpoints; 0 = final only
    std::filesystem::path checkpoint_dir;  // empty = keep everything in memory
    std::map<std::string, std::string> checkpoint_meta;
};

namespace detail {

template <typename S>
void check_normalized(const TensorT<S>& x0) {
    for (std::size_t i = 0; i < x0.numel(); ++i)
        if (std::abs(static_cast<double>(x0[i])) > 1.0 + 1e-3)
            throw std::invalid_argument("simple_loss: input not normalized to [-1,1] (max |x| > 1+1e-3)");
}

}  // namespace detail

/// Per-sample draws for the simplified objective: a uniform timestep in
/// 1..T and a standard-normal eps, plus the noised batch they induce.
template <typename S>
struct LossDraws {
    TensorT<S> x_t;       // (B,C,H,W)
    TensorT<S> eps;       // same shape
    std::vector<int> t;   // one per sample
};

template <typename S>
LossDraws<S> simple_loss_draws(const TensorT<S>& x0_batch, const NoiseSchedule& sched, Rng& rng) {
    detail::check_normalized(x0_batch);
    const int B = x0_batch.extent(0);
    const std::size_t per = x0_batch.numel() / static_cast<std::size_t>(B);
    LossDraws<S> d;
    d.x_t = TensorT<S>(x0_batch.shape());
    d.eps = TensorT<S>(x0_batch.shape());
    d.t.resize(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
        const int t = 1 + rng.uniform_int(sched.T);
        d.t[static_cast<std::size_t>(b)] = t;
        const double ab = sched.alpha_bar_at(t);
        const S sig = static_cast<S>(std::sqrt(ab));
        const S noi = static_cast<S>(std::sqrt(1.0 - ab));
        const S* x0 = x0_batch.data() + static_cast<std::size_t>(b) * per;
        S* xt = d.x_t.data() + static_cast<std::size_t>(b) * per;
        S* ep = d.eps.data() + static_cast<std::size_t>(b) * per;
        for (std::size_t i = 0; i < per; ++i) {
            ep[i] = static_cast<S>(rng.normal());
            xt[i] = sig * x0[i] + noi * ep[i];
        }
    }
    return d;
}

/// mean || eps - eps_theta(x_t, t) ||^2 over batch and pixels, given draws.
template <typename S, typename Model>
VarT<S> simple_loss_from(Model& model, const LossDraws<S>& draws, const std::vector<int>* labels = nullptr) {
    VarT<S> eps_hat = model.predict(constant(TensorT<S>(draws.x_t)), draws.t, labels);
    return mse_mean(eps_hat, constant(TensorT<S>(draws.eps)));
}

template <typename S, typename Model>
VarT<S> simple_loss(Model& model, const TensorT<S>& x0_batch, const NoiseSchedule& sched, Rng& rng,
                    const std::vector<int>* labels = nullptr) {
    auto draws = simple_loss_draws<S>(x0_batch, sched, rng);
    return simple_loss_from<S>(model, draws, labels);
}

/// x_{t-1} mean from the eps-parameterization plus sigma_t * z.
template <typename S>
TensorT<S> reverse_step_from_eps(const TensorT<S>& x_t, const TensorT<S>& eps_hat, int t, const NoiseSchedule& sched,
                                 const TensorT<S>* z) {
    const double a = sched.alpha_at(t);
    const double b = sched.beta_at(t);
    const double ab = sched.alpha_bar_at(t);
    const S inv_sqrt_a = static_cast<S>(1.0 / std::sqrt(a));
    const S coef = static_cast<S>(b / std::sqrt(1.0 - ab));
    const S sigma = static_cast<S>(std::sqrt(b));
    TensorT<S> out(x_t.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = inv_sqrt_a * (x_t[i] - coef * eps_hat[i]);
        if (z) out[i] += sigma * (*z)[i];
    }
    return out;
}

/// One ancestral step on a (B,C,H,W) batch; z is drawn from rng unless t=1
/// (deterministic final step) or noise is suppressed.
template <typename S, typename Model>
TensorT<S> reverse_step(Model& model, const TensorT<S>& x_t, int t, const SamplerConfig& cfg, Rng& rng,
                        const std::vector<int>* labels = nullptr) {
    cfg.schedule.check_t(t);
    std::vector<int> ts(static_cast<std::size_t>(x_t.extent(0)), t);
    TensorT<S> eps_hat = model.predict(constant(TensorT<S>(x_t)), ts, labels)->value;
    const bool add_noise = !cfg.force_zero_noise && !(t == 1 && cfg.deterministic_final_step);
    if (!add_noise) return reverse_step_from_eps<S>(x_t, eps_hat, t, cfg.schedule, nullptr);
    TensorT<S> z(x_t.shape());
    for (std::size_t i = 0; i < z.numel(); ++i) z[i] = static_cast<S>(rng.normal());
    return reverse_step_from_eps<S>(x_t, eps_hat, t, cfg.schedule, &z);
}

/// Full reverse chain from x_T ~ N(0,I) for one independent stream per
/// image. Streams make the result invariant to the internal batch size.
/// Outputs are clamped to [-1,1]; pre_clamp receives the raw x_0.
template <typename S, typename Model>
std::vector<TensorT<S>> sample_streams(Model& model, std::vector<Rng> streams, const SamplerConfig& cfg,
                                       const std::vector<int>* class_ids = nullptr,
                                       std::vector<TensorT<S>>* pre_clamp = nullptr) {
    const int n = static_cast<int>(streams.size());
    const Shape img_shape = model.image_shape();
    const std::size_t per = shape_numel(img_shape);
    const int T = cfg.schedule.T;
    std::vector<TensorT<S>> xs;
    xs.reserve(static_cast<std::size_t>(n));
    for (auto& st : streams) xs.push_back(st.template normal_tensor<S>(img_shape));

    for (int begin = 0; begin < n; begin += cfg.batch) {
        const int bs = std::min(cfg.batch, n - begin);
        TensorT<S> batch({bs, img_shape[0], img_shape[1], img_shape[2]});
        for (int b = 0; b < bs; ++b)
            std::copy(xs[static_cast<std::size_t>(begin + b)].data(),
                      xs[static_cast<std::size_t>(begin + b)].data() + per, batch.data() + static_cast<std::size_t>(b) * per);
        std::vector<int> labels;
        if (class_ids) {
            labels.assign(class_ids->begin() + begin, class_ids->begin() + begin + bs);
        }
        for (int t = T; t >= 1; --t) {
            std::vector<int> ts(static_cast<std::size_t>(bs), t);
            TensorT<S> eps_hat = model.predict(constant(TensorT<S>(batch)), ts, class_ids ? &labels : nullptr)->value;
            if (!eps_hat.all_finite()) throw std::runtime_error("sample: non-finite noise prediction at t=" + std::to_string(t));
            const bool add_noise = !cfg.force_zero_noise && !(t == 1 && cfg.deterministic_final_step);
            TensorT<S> next = reverse_step_from_eps<S>(batch, eps_hat, t, cfg.schedule, nullptr);
            if (add_noise) {
                const S sigma = static_cast<S>(std::sqrt(cfg.schedule.beta_at(t)));
                for (int b = 0; b < bs; ++b) {
                    Rng& st = streams[static_cast<std::size_t>(begin + b)];
                    S* out = next.data() + static_cast<std::size_t>(b) * per;
                    for (std::size_t i = 0; i < per; ++i) out[i] += sigma * static_cast<S>(st.normal());
                }
            }
            batch = std::move(next);
        }
        for (int b = 0; b < bs; ++b) {
            TensorT<S> img(img_shape);
            std::copy(batch.data() + static_cast<std::size_t>(b) * per, batch.data() + static_cast<std::size_t>(b + 1) * per,
                      img.data());
            if (pre_clamp) pre_clamp->push_back(img);
            for (std::size_t i = 0; i < per; ++i) img[i] = std::min(S(1), std::max(S(-1), img[i]));
            xs[static_cast<std::size_t>(begin + b)] = std::move(img);
        }
    }
    return xs;
}

template <typename S, typename Model>
std::vector<TensorT<S>> sample(Model& model, int n, const SamplerConfig& cfg, Rng& rng, int class_id = -1,
                               std::vector<TensorT<S>>* pre_clamp = nullptr) {
    if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
    std::vector<Rng> streams;
    streams.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) streams.push_back(rng.split(static_cast<std::uint64_t>(i)));
    std::vector<int> ids;
    if (class_id >= 0) ids.assign(static_cast<std::size_t>(n), class_id);
    return sample_streams<S>(model, std::move(streams), cfg, class_id >= 0 ? &ids : nullptr, pre_clamp);
}

// ------------------------------------------------------------- training

/// Shuffled-minibatch AdamW on the simplified objective. Returns per-epoch
/// mean loss; a non-finite loss aborts, leaving the last checkpoint on disk.
std::vector<float> train_dm(DenoiserModel& model, const std::vector<Tensor>& images, const NoiseSchedule& sched,
                            const DMTrainConfig& cfg, const std::vector<int>* labels = nullptr);

// ------------------------------------------------------------ generation

struct GenerationItem {
    std::string relative_path;
    std::string class_label;
    int class_id = 0;
    std::uint64_t stream_seed = 0;
    std::string checkpoint_id;
};

/// Deterministic file plan for a per-class generation request; counts must
/// be positive. The image at (class c, index i) always draws from the same
/// stream regardless of batching.
std::vector<GenerationItem> plan_generation(const std::vector<std::string>& class_names, const std::vector<int>& counts,
                                            std::uint64_t seed, const std::vector<std::string>& checkpoint_ids);

/// Render the plan with one unconditional model per class (conditional =
/// nullptr) or a single conditional model. Writes PNGs into class folders
/// plus manifest.csv (relative_path,class_label,seed,model_checkpoint_id).
std::filesystem::path generate_dataset(const std::vector<DenoiserModel*>& per_class, DenoiserModel* conditional,
                                       const std::vector<std::string>& class_names, const std::vector<int>& counts,
                                       const std::filesystem::path& out_dir, std::uint64_t seed,
                                       const SamplerConfig& sampler,
                                       const std::vector<std::string>& checkpoint_ids);

}  // namespace diffgen

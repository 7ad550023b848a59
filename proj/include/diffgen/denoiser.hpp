#pragma once

#include <optional>
#include <string>
#include <vector>

#include "diffgen/ops.hpp"
#include "diffgen/rng.hpp"

namespace diffgen {

struct DenoiserConfig {
    int image_size = 64;  // square, power of two, >= 16
    int in_channels = 1;
    int base_channels = 64;
    std::vector<int> channel_multipliers = {1, 2, 4};
    int blocks_per_level = 2;
    int time_embed_dim = 0;  // 0 -> 4 * base_channels
    int num_classes = 0;     // 0 = unconditional
    int norm_groups = 8;

    int levels() const { return static_cast<int>(channel_multipliers.size()); }
    int embed_dim() const { return time_embed_dim > 0 ? time_embed_dim : 4 * base_channels; }

    void validate() const {
        if (image_size < 16 || (image_size & (image_size - 1)) != 0)
            throw std::invalid_argument("denoiser: image_size must be a power of two >= 16");
        if (in_channels != 1 && in_channels != 3) throw std::invalid_argument("denoiser: in_channels must be 1 or 3");
        if (base_channels <= 0 || blocks_per_level <= 0 || channel_multipliers.empty())
            throw std::invalid_argument("denoiser: invalid geometry");
        if (base_channels % norm_groups != 0)
            throw std::invalid_argument("denoiser: base_channels must be divisible by norm_groups");
        if (embed_dim() % 2 != 0) throw std::invalid_argument("denoiser: time embedding dim must be even");
        if (image_size % (1 << (levels() - 1)) != 0)
            throw std::invalid_argument("denoiser: image_size not divisible by 2^(levels-1)");
        for (int m : channel_multipliers)
            if (m <= 0) throw std::invalid_argument("denoiser: channel multipliers must be positive");
        if (num_classes < 0) throw std::invalid_argument("denoiser: num_classes must be >= 0");
    }
};

/// Sinusoidal position code for a timestep: half sine, half cosine over
/// geometric frequencies with base 10000, so position 0 carries sin(t), cos(t).
template <typename S>
TensorT<S> time_embedding(int t, int dim) {
    if (dim % 2 != 0) throw std::invalid_argument("time_embedding: dim must be even");
    if (t < 1) throw std::invalid_argument("time_embedding: t must be >= 1");
    const int half = dim / 2;
    TensorT<S> emb({dim});
    for (int i = 0; i < half; ++i) {
        const double freq = (half > 1) ? std::exp(-std::log(10000.0) * i / (half - 1)) : 1.0;
        emb[static_cast<std::size_t>(i)] = static_cast<S>(std::sin(t * freq));
        emb[static_cast<std::size_t>(half + i)] = static_cast<S>(std::cos(t * freq));
    }
    return emb;
}

namespace layers {

template <typename S>
struct Conv2dLayer {
    VarT<S> w, b;
    Conv2dSpec spec;
    VarT<S> operator()(const VarT<S>& x) const { return conv2d<S>(x, w, b, spec); }
};

template <typename S>
struct LinearLayer {
    VarT<S> w, b;
    VarT<S> operator()(const VarT<S>& x) const { return linear<S>(x, w, b); }
};

template <typename S>
struct GroupNormLayer {
    VarT<S> gamma, beta;
    int groups = 8;
    VarT<S> operator()(const VarT<S>& x) const { return group_norm<S>(x, gamma, beta, groups); }
};

/// He fan-in initialization for conv weights; zero_init forces an
/// identically-zero layer output at build time.
template <typename S>
Conv2dLayer<S> make_conv(ParamStoreT<S>& ps, const std::string& name, int cin, int cout, int k, Rng& rng,
                         Conv2dSpec spec = {}, bool zero_init = false) {
    const int fan_in = (cin / spec.groups) * k * k;
    const double stddev = std::sqrt(2.0 / fan_in);
    TensorT<S> w({cout, cin / spec.groups, k, k});
    if (!zero_init)
        for (std::size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<S>(rng.normal() * stddev);
    Conv2dLayer<S> layer;
    layer.w = ps.add(name + ".weight", std::move(w));
    layer.b = ps.add(name + ".bias", TensorT<S>::zeros({cout}));
    layer.spec = spec;
    return layer;
}

template <typename S>
LinearLayer<S> make_linear(ParamStoreT<S>& ps, const std::string& name, int in, int out, Rng& rng,
                           bool zero_init = false) {
    const double stddev = std::sqrt(2.0 / in);
    TensorT<S> w({out, in});
    if (!zero_init)
        for (std::size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<S>(rng.normal() * stddev);
    LinearLayer<S> layer;
    layer.w = ps.add(name + ".weight", std::move(w));
    layer.b = ps.add(name + ".bias", TensorT<S>::zeros({out}));
    return layer;
}

template <typename S>
GroupNormLayer<S> make_group_norm(ParamStoreT<S>& ps, const std::string& name, int channels, int groups) {
    GroupNormLayer<S> layer;
    layer.gamma = ps.add(name + ".gamma", TensorT<S>::full({channels}, S(1)));
    layer.beta = ps.add(name + ".beta", TensorT<S>::zeros({channels}));
    layer.groups = groups;
    return layer;
}

/// norm-act-conv twice with the timestep embedding injected between the
/// convolutions; the second conv is zero-initialized so a fresh block is the
/// identity on its skip path.
template <typename S>
struct ResBlock {
    GroupNormLayer<S> norm1, norm2;
    Conv2dLayer<S> conv1, conv2;
    LinearLayer<S> time_proj;
    std::optional<Conv2dLayer<S>> skip;

    VarT<S> operator()(const VarT<S>& x, const VarT<S>& temb_act) const {
        auto h = conv1(silu(norm1(x)));
        h = add_channel_bias(h, time_proj(temb_act));
        h = conv2(silu(norm2(h)));
        return add(h, skip ? (*skip)(x) : x);
    }
};

template <typename S>
ResBlock<S> make_res_block(ParamStoreT<S>& ps, const std::string& name, int cin, int cout, int embed_dim, int groups,
                           Rng& rng) {
    ResBlock<S> blk;
    blk.norm1 = make_group_norm<S>(ps, name + ".norm1", cin, groups);
    blk.conv1 = make_conv<S>(ps, name + ".conv1", cin, cout, 3, rng, {.stride = 1, .pad = 1});
    blk.time_proj = make_linear<S>(ps, name + ".time_proj", embed_dim, cout, rng);
    blk.norm2 = make_group_norm<S>(ps, name + ".norm2", cout, groups);
    blk.conv2 = make_conv<S>(ps, name + ".conv2", cout, cout, 3, rng, {.stride = 1, .pad = 1}, /*zero_init=*/true);
    if (cin != cout) blk.skip = make_conv<S>(ps, name + ".skip", cin, cout, 1, rng);
    return blk;
}

}  // namespace layers

/// The noise-prediction U-Net: stride-2 conv downsampling, nearest-neighbor
/// upsampling with skip concatenation, sinusoidal timestep embedding passed
/// through a two-layer MLP, optional class-embedding table added on top.
/// The output conv is zero-initialized, so a fresh model predicts zero noise.
template <typename S>
struct DenoiserModelT {
    DenoiserConfig config;
    ParamStoreT<S> params;

    layers::Conv2dLayer<S> conv_in;
    layers::LinearLayer<S> time_fc1, time_fc2;
    VarT<S> class_table;  // (num_classes, embed_dim) when conditional

    struct DownLevel {
        std::vector<layers::ResBlock<S>> blocks;
        std::optional<layers::Conv2dLayer<S>> down;
    };
    struct UpLevel {
        std::vector<layers::ResBlock<S>> blocks;
        std::optional<layers::Conv2dLayer<S>> up_conv;
    };
    std::vector<DownLevel> down_levels;
    layers::ResBlock<S> mid;
    std::vector<UpLevel> up_levels;
    layers::GroupNormLayer<S> out_norm;
    layers::Conv2dLayer<S> out_conv;

    void set_training(bool on) { params.set_requires_grad(on); }

    Shape image_shape() const { return {config.in_channels, config.image_size, config.image_size}; }

    VarT<S> predict(const VarT<S>& x, const std::vector<int>& t, const std::vector<int>* labels = nullptr) const;
};

template <typename S>
DenoiserModelT<S> build_denoiser(const DenoiserConfig& config, Rng& rng) {
    config.validate();
    DenoiserModelT<S> m;
    m.config = config;
    auto& ps = m.params;
    const int ed = config.embed_dim();
    const int g = config.norm_groups;
    const int L = config.levels();

    m.time_fc1 = layers::make_linear<S>(ps, "time.fc1", ed, ed, rng);
    m.time_fc2 = layers::make_linear<S>(ps, "time.fc2", ed, ed, rng);
    if (config.num_classes > 0) {
        TensorT<S> table({config.num_classes, ed});
        const double stddev = 0.02;
        for (std::size_t i = 0; i < table.numel(); ++i) table[i] = static_cast<S>(rng.normal() * stddev);
        m.class_table = ps.add("class_embed.table", std::move(table));
    }

    std::vector<int> chans(static_cast<std::size_t>(L));
    for (int i = 0; i < L; ++i) chans[static_cast<std::size_t>(i)] = config.base_channels * config.channel_multipliers[static_cast<std::size_t>(i)];

    m.conv_in = layers::make_conv<S>(ps, "conv_in", config.in_channels, chans[0], 3, rng, {.stride = 1, .pad = 1});

    int cur = chans[0];
    for (int i = 0; i < L; ++i) {
        typename DenoiserModelT<S>::DownLevel level;
        for (int bidx = 0; bidx < config.blocks_per_level; ++bidx) {
            const std::string name = "down" + std::to_string(i) + ".block" + std::to_string(bidx);
            level.blocks.push_back(layers::make_res_block<S>(ps, name, cur, chans[static_cast<std::size_t>(i)], ed, g, rng));
            cur = chans[static_cast<std::size_t>(i)];
        }
        if (i < L - 1)
            level.down = layers::make_conv<S>(ps, "down" + std::to_string(i) + ".downsample", cur, cur, 3, rng,
                                              {.stride = 2, .pad = 1});
        m.down_levels.push_back(std::move(level));
    }

    m.mid = layers::make_res_block<S>(ps, "mid.block0", cur, cur, ed, g, rng);

    for (int i = L - 1; i >= 0; --i) {
        typename DenoiserModelT<S>::UpLevel level;
        const int ci = chans[static_cast<std::size_t>(i)];
        for (int bidx = 0; bidx < config.blocks_per_level; ++bidx) {
            const std::string name = "up" + std::to_string(i) + ".block" + std::to_string(bidx);
            const int cin = (bidx == 0) ? cur + ci : ci;  // first block consumes the skip concat
            level.blocks.push_back(layers::make_res_block<S>(ps, name, cin, ci, ed, g, rng));
        }
        cur = ci;
        if (i > 0)
            level.up_conv = layers::make_conv<S>(ps, "up" + std::to_string(i) + ".upsample", cur,
                                                 chans[static_cast<std::size_t>(i - 1)], 3, rng, {.stride = 1, .pad = 1});
        if (i > 0) cur = chans[static_cast<std::size_t>(i - 1)];
        m.up_levels.push_back(std::move(level));
    }

    m.out_norm = layers::make_group_norm<S>(ps, "out.norm", chans[0], g);
    m.out_conv = layers::make_conv<S>(ps, "out.conv", chans[0], config.in_channels, 3, rng, {.stride = 1, .pad = 1},
                                      /*zero_init=*/true);
    return m;
}

/// eps_theta(x_t, t[, y]) on an autodiff batch. x (B,C,H,W); t holds one
/// 1-indexed timestep per sample. Labels are required exactly when the
/// model is conditional and ignored entirely otherwise.
template <typename S>
VarT<S> predict_noise(const DenoiserModelT<S>& m, const VarT<S>& x, const std::vector<int>& t,
                      const std::vector<int>* labels = nullptr) {
    const auto& cfg = m.config;
    if (x->value.ndim() != 4 || x->value.extent(1) != cfg.in_channels || x->value.extent(2) != cfg.image_size ||
        x->value.extent(3) != cfg.image_size)
        throw std::invalid_argument("predict_noise: input shape " + shape_str(x->value.shape()) +
                                    " does not match configured geometry");
    const int B = x->value.extent(0);
    if (static_cast<int>(t.size()) != B) throw std::invalid_argument("predict_noise: need one timestep per sample");
    const int ed = cfg.embed_dim();

    TensorT<S> emb({B, ed});
    for (int b = 0; b < B; ++b) {
        TensorT<S> e = time_embedding<S>(t[static_cast<std::size_t>(b)], ed);
        std::copy(e.data(), e.data() + ed, emb.data() + static_cast<std::size_t>(b) * ed);
    }
    VarT<S> temb = m.time_fc2(silu(m.time_fc1(constant(std::move(emb)))));
    if (cfg.num_classes > 0) {
        if (!labels || static_cast<int>(labels->size()) != B)
            throw std::invalid_argument("predict_noise: conditional model requires one label per sample");
        temb = add(temb, embedding_lookup<S>(m.class_table, *labels));
    }
    VarT<S> temb_act = silu(temb);

    VarT<S> h = m.conv_in(x);
    std::vector<VarT<S>> skips;
    for (const auto& level : m.down_levels) {
        for (const auto& blk : level.blocks) h = blk(h, temb_act);
        skips.push_back(h);
        if (level.down) h = (*level.down)(h);
    }
    h = m.mid(h, temb_act);
    for (std::size_t ui = 0; ui < m.up_levels.size(); ++ui) {
        const auto& level = m.up_levels[ui];
        h = concat_channels<S>({h, skips[skips.size() - 1 - ui]});
        for (const auto& blk : level.blocks) h = blk(h, temb_act);
        if (level.up_conv) h = (*level.up_conv)(upsample_nearest(h, 2));
    }
    return m.out_conv(silu(m.out_norm(h)));
}

/// Inference-only convenience; the params keep requires_grad untouched and
/// the returned tensor is detached from any graph.
template <typename S>
TensorT<S> predict_noise_value(const DenoiserModelT<S>& m, const TensorT<S>& x, const std::vector<int>& t,
                               const std::vector<int>* labels = nullptr) {
    return predict_noise<S>(m, constant(TensorT<S>(x)), t, labels)->value;
}

template <typename S>
VarT<S> DenoiserModelT<S>::predict(const VarT<S>& x, const std::vector<int>& t, const std::vector<int>* labels) const {
    return predict_noise<S>(*this, x, t, labels);
}

using DenoiserModel = DenoiserModelT<float>;

}  // namespace diffgen

#include "diffgen/lime.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace diffgen {

SegmentMap segment_grid(int width, int height, int cell) {
    if (cell < 1) throw std::invalid_argument("segment_grid: cell must be >= 1");
    if (width < 1 || height < 1) throw std::invalid_argument("segment_grid: empty image");
    SegmentMap sm;
    sm.width = width;
    sm.height = height;
    const int cols = (width + cell - 1) / cell;
    const int rows = (height + cell - 1) / cell;
    sm.segments = rows * cols;
    sm.ids.resize(static_cast<std::size_t>(width) * height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) sm.ids[static_cast<std::size_t>(y) * width + x] = (y / cell) * cols + (x / cell);
    return sm;
}

PerturbationSet perturb(const Tensor& image, const SegmentMap& segmap, int n, Rng& rng) {
    if (image.ndim() != 3) throw std::invalid_argument("perturb: image must be (C,H,W)");
    const int C = image.extent(0), H = image.extent(1), W = image.extent(2);
    if (H != segmap.height || W != segmap.width) throw std::invalid_argument("perturb: segment map size mismatch");
    const int S = segmap.segments;
    if (n < S + 2)
        throw std::invalid_argument("perturb: need at least segments+2 samples (" + std::to_string(S + 2) + ")");

    std::vector<float> channel_mean(static_cast<std::size_t>(C), 0.0f);
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        double s = 0;
        for (std::size_t i = 0; i < hw; ++i) s += image[static_cast<std::size_t>(c) * hw + i];
        channel_mean[static_cast<std::size_t>(c)] = static_cast<float>(s / static_cast<double>(hw));
    }

    PerturbationSet out;
    out.masks.resize(static_cast<std::size_t>(n));
    out.images.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto& mask = out.masks[static_cast<std::size_t>(i)];
        mask.assign(static_cast<std::size_t>(S), 1);
        if (i > 0)
            for (int s = 0; s < S; ++s) mask[static_cast<std::size_t>(s)] = rng.uniform() < 0.5 ? 1 : 0;
        Tensor img = image;
        if (i > 0) {
            for (int c = 0; c < C; ++c) {
                float* p = img.data() + static_cast<std::size_t>(c) * hw;
                for (std::size_t px = 0; px < hw; ++px)
                    if (!mask[static_cast<std::size_t>(segmap.ids[px])]) p[px] = channel_mean[static_cast<std::size_t>(c)];
            }
        }
        out.images.push_back(std::move(img));
    }
    return out;
}

namespace {

/// Solve the SPD system G x = b in place via Cholesky; returns false when a
/// pivot collapses (degenerate design).
bool cholesky_solve(std::vector<double>& G, std::vector<double>& b, int n) {
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = G[static_cast<std::size_t>(i) * n + j];
            for (int k = 0; k < j; ++k) s -= G[static_cast<std::size_t>(i) * n + k] * G[static_cast<std::size_t>(j) * n + k];
            if (i == j) {
                if (s <= 1e-14) return false;
                G[static_cast<std::size_t>(i) * n + j] = std::sqrt(s);
            } else {
                G[static_cast<std::size_t>(i) * n + j] = s / G[static_cast<std::size_t>(j) * n + j];
            }
        }
    }
    for (int i = 0; i < n; ++i) {
        double s = b[static_cast<std::size_t>(i)];
        for (int k = 0; k < i; ++k) s -= G[static_cast<std::size_t>(i) * n + k] * b[static_cast<std::size_t>(k)];
        b[static_cast<std::size_t>(i)] = s / G[static_cast<std::size_t>(i) * n + i];
    }
    for (int i = n - 1; i >= 0; --i) {
        double s = b[static_cast<std::size_t>(i)];
        for (int k = i + 1; k < n; ++k) s -= G[static_cast<std::size_t>(k) * n + i] * b[static_cast<std::size_t>(k)];
        b[static_cast<std::size_t>(i)] = s / G[static_cast<std::size_t>(i) * n + i];
    }
    return true;
}

}  // namespace

Explanation explain(const PredictFn& predict, const Tensor& image, const LimeConfig& cfg) {
    const int W = image.extent(2);
    const int cell = cfg.cell > 0 ? cfg.cell : std::max(1, W / 8);
    SegmentMap segmap = segment_grid(image.extent(2), image.extent(1), cell);
    const int S = segmap.segments;
    const double kw = cfg.kernel_width > 0 ? cfg.kernel_width : 0.25 * std::sqrt(static_cast<double>(S));

    int class_id = cfg.class_id;
    if (class_id < 0) {
        auto probs = predict(image);
        class_id = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    }

    Rng rng(cfg.seed);
    PerturbationSet pset = perturb(image, segmap, cfg.num_samples, rng);
    const int n = cfg.num_samples;

    std::vector<double> y(static_cast<std::size_t>(n));
    std::vector<double> w(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto probs = predict(pset.images[static_cast<std::size_t>(i)]);
        if (class_id >= static_cast<int>(probs.size())) throw std::out_of_range("explain: class id outside predictor output");
        y[static_cast<std::size_t>(i)] = probs[static_cast<std::size_t>(class_id)];
        int on = 0;
        for (auto m : pset.masks[static_cast<std::size_t>(i)]) on += m;
        const double cos_sim = std::sqrt(static_cast<double>(on) / static_cast<double>(S));
        const double d = 1.0 - cos_sim;
        w[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (kw * kw));
    }

    // weighted ridge over [masks | 1]; the intercept column is unpenalized
    const int P = S + 1;
    std::vector<double> G(static_cast<std::size_t>(P) * P, 0.0);
    std::vector<double> rhs(static_cast<std::size_t>(P), 0.0);
    std::vector<double> row(static_cast<std::size_t>(P));
    for (int i = 0; i < n; ++i) {
        for (int s = 0; s < S; ++s) row[static_cast<std::size_t>(s)] = pset.masks[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)];
        row[static_cast<std::size_t>(S)] = 1.0;
        const double wi = w[static_cast<std::size_t>(i)];
        for (int a = 0; a < P; ++a) {
            const double wa = wi * row[static_cast<std::size_t>(a)];
            if (wa == 0.0) continue;
            for (int b = 0; b <= a; ++b) G[static_cast<std::size_t>(a) * P + b] += wa * row[static_cast<std::size_t>(b)];
            rhs[static_cast<std::size_t>(a)] += wa * y[static_cast<std::size_t>(i)];
        }
    }
    for (int a = 0; a < P; ++a)
        for (int b = a + 1; b < P; ++b) G[static_cast<std::size_t>(a) * P + b] = G[static_cast<std::size_t>(b) * P + a];
    for (int s = 0; s < S; ++s) G[static_cast<std::size_t>(s) * P + s] += cfg.ridge_lambda;

    if (!cholesky_solve(G, rhs, P))
        throw std::runtime_error("explain: degenerate design matrix; increase num_samples");

    Explanation ex;
    ex.weights.assign(rhs.begin(), rhs.begin() + S);
    ex.intercept = rhs[static_cast<std::size_t>(S)];
    ex.class_id = class_id;
    ex.num_perturbations = n;
    ex.kernel_width = kw;
    ex.segmap = std::move(segmap);

    // weighted R^2 against the weighted mean
    double wsum = 0, ymean = 0;
    for (int i = 0; i < n; ++i) {
        wsum += w[static_cast<std::size_t>(i)];
        ymean += w[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)];
    }
    ymean /= wsum;
    double ss_res = 0, ss_tot = 0;
    for (int i = 0; i < n; ++i) {
        double pred = ex.intercept;
        for (int s = 0; s < S; ++s)
            if (pset.masks[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)]) pred += ex.weights[static_cast<std::size_t>(s)];
        const double r = y[static_cast<std::size_t>(i)] - pred;
        const double t = y[static_cast<std::size_t>(i)] - ymean;
        ss_res += w[static_cast<std::size_t>(i)] * r * r;
        ss_tot += w[static_cast<std::size_t>(i)] * t * t;
    }
    ex.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    ex.low_fit_flag = ex.r_squared < 0.5;
    return ex;
}

ImageU8 render_heatmap(const Explanation& explanation, const Tensor& image, int top_k) {
    const int S = explanation.segmap.segments;
    if (top_k < 1 || top_k > S) throw std::invalid_argument("render_heatmap: top_k must be in 1..segments");
    const int C = image.extent(0), H = image.extent(1), W = image.extent(2);
    if (H != explanation.segmap.height || W != explanation.segmap.width)
        throw std::invalid_argument("render_heatmap: image does not match segment map");

    std::vector<int> order(static_cast<std::size_t>(S));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return std::abs(explanation.weights[static_cast<std::size_t>(a)]) > std::abs(explanation.weights[static_cast<std::size_t>(b)]);
    });

    std::vector<int> tint(static_cast<std::size_t>(S), 0);  // 0 none, +1 positive, -1 negative
    for (int i = 0; i < top_k; ++i) {
        const int s = order[static_cast<std::size_t>(i)];
        const double wgt = explanation.weights[static_cast<std::size_t>(s)];
        if (wgt > 0)
            tint[static_cast<std::size_t>(s)] = 1;
        else if (wgt < 0)
            tint[static_cast<std::size_t>(s)] = -1;
    }

    ImageU8 out;
    out.width = W;
    out.height = H;
    out.channels = 3;
    out.pixels.resize(static_cast<std::size_t>(W) * H * 3);
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    constexpr double kAlpha = 0.45;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const std::size_t px = static_cast<std::size_t>(y) * W + x;
            double r, g, b;
            if (C == 1) {
                const double v = std::min(1.0f, std::max(0.0f, image[px])) * 255.0;
                r = g = b = v;
            } else {
                r = std::min(1.0f, std::max(0.0f, image[px])) * 255.0;
                g = std::min(1.0f, std::max(0.0f, image[hw + px])) * 255.0;
                b = std::min(1.0f, std::max(0.0f, image[2 * hw + px])) * 255.0;
            }
            const int t = tint[static_cast<std::size_t>(explanation.segmap.ids[px])];
            if (t > 0) {
                g = (1 - kAlpha) * g + kAlpha * 255.0;
                r = (1 - kAlpha) * r;
                b = (1 - kAlpha) * b;
            } else if (t < 0) {
                r = (1 - kAlpha) * r + kAlpha * 255.0;
                g = (1 - kAlpha) * g;
                b = (1 - kAlpha) * b;
            }
            out.pixels[px * 3] = static_cast<std::uint8_t>(std::lround(r));
            out.pixels[px * 3 + 1] = static_cast<std::uint8_t>(std::lround(g));
            out.pixels[px * 3 + 2] = static_cast<std::uint8_t>(std::lround(b));
        }
    return out;
}

}  // namespace diffgen

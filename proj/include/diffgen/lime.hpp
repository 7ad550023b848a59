#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "diffgen/image.hpp"
#include "diffgen/rng.hpp"
#include "diffgen/tensor.hpp"

namespace diffgen {

/// Rectangular-grid segmentation: every pixel carries a segment id in
/// [0, segments), ids contiguous in row-major cell order.
struct SegmentMap {
    int width = 0, height = 0;
    int segments = 0;
    std::vector<int> ids;  // per pixel, row-major

    int id_at(int y, int x) const { return ids[static_cast<std::size_t>(y) * width + x]; }
};

SegmentMap segment_grid(int width, int height, int cell);

struct PerturbationSet {
    std::vector<std::vector<std::uint8_t>> masks;  // n rows of S bits; row 0 all ones
    std::vector<Tensor> images;                    // perturbed copies of the input
};

/// Bernoulli(0.5) segment masks (row 0 forced to all ones); masked-off
/// segments are replaced by the image's per-channel mean. Requires
/// n >= segments + 2 so the surrogate below stays solvable.
PerturbationSet perturb(const Tensor& image, const SegmentMap& segmap, int n, Rng& rng);

using PredictFn = std::function<std::vector<double>(const Tensor& image)>;

struct LimeConfig {
    int cell = 0;               // 0 -> image width / 8
    int num_samples = 1000;
    double kernel_width = 0.0;  // 0 -> 0.25 * sqrt(segments)
    double ridge_lambda = 1e-3;
    int class_id = -1;          // -1 -> the model's predicted class
    std::uint64_t seed = 0;
};

struct Explanation {
    std::vector<double> weights;  // one per segment
    double intercept = 0;
    int class_id = 0;
    double r_squared = 0;
    int num_perturbations = 0;
    double kernel_width = 0;
    bool low_fit_flag = false;  // r_squared < 0.5
    SegmentMap segmap;
};

/// Kernel-weighted ridge fit of the class probability against segment masks;
/// sample weight is exp(-d^2 / kernel_width^2) with d the cosine distance
/// between the mask and the all-ones mask. The intercept is unpenalized.
Explanation explain(const PredictFn& predict, const Tensor& image, const LimeConfig& cfg);

/// Tint the top_k |weight| segments (positive green, negative red) over the
/// input rendered as RGB; zero-weight segments stay untinted.
ImageU8 render_heatmap(const Explanation& explanation, const Tensor& image, int top_k);

}  // namespace diffgen

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "diffgen/tensor.hpp"

namespace diffgen {

/// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels.
struct ImageU8 {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;  // row-major, interleaved

    std::uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

/// Decode a PNG or JPEG file (by signature, not extension). Throws with the
/// file name on undecodable input.
ImageU8 load_image(const std::filesystem::path& path);

void save_png(const std::filesystem::path& path, const ImageU8& img);

/// Bilinear resample to the target size; identity when sizes already match.
ImageU8 resize_bilinear(const ImageU8& img, int out_w, int out_h);

ImageU8 to_channels(const ImageU8& img, int channels);

/// Planar float tensor (C,H,W) scaled to [0,1].
Tensor image_to_tensor(const ImageU8& img);

/// Inverse of image_to_tensor with rounding; values are clamped to [0,1].
ImageU8 tensor_to_image(const Tensor& t);

}  // namespace diffgen

#include "diffgen/image.hpp"

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <stdexcept>

#include <jpeglib.h>
#include <png.h>

namespace diffgen {

namespace {

struct FileHandle {
    std::FILE* fp = nullptr;
    explicit FileHandle(const std::filesystem::path& path, const char* mode) : fp(std::fopen(path.c_str(), mode)) {}
    ~FileHandle() {
        if (fp) std::fclose(fp);
    }
    FileHandle(const FileHandle&) = delete;
    FileHandle& operator=(const FileHandle&) = delete;
};

ImageU8 load_png_file(const std::filesystem::path& path) {
    FileHandle f(path, "rb");
    if (!f.fp) throw std::runtime_error("cannot open image: " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw std::runtime_error("png init failed");
    ImageU8 img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("undecodable PNG file: " + path.string());
    }
    png_init_io(png, f.fp);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_packing(png);
    png_set_strip_alpha(png);
    const png_byte color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.channels = static_cast<int>(png_get_channels(png, info));
    if (img.channels != 1 && img.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("unsupported channel count in " + path.string());
    }
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
    rows.resize(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y)
        rows[static_cast<std::size_t>(y)] = img.pixels.data() + static_cast<std::size_t>(y) * img.width * img.channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

ImageU8 load_jpeg_file(const std::filesystem::path& path) {
    FileHandle f(path, "rb");
    if (!f.fp) throw std::runtime_error("cannot open image: " + path.string());
    jpeg_decompress_struct cinfo;
    JpegErrorMgr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw std::runtime_error("undecodable JPEG file: " + path.string());
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f.fp);
    jpeg_read_header(&cinfo, TRUE);
    jpeg_start_decompress(&cinfo);
    ImageU8 img;
    img.width = static_cast<int>(cinfo.output_width);
    img.height = static_cast<int>(cinfo.output_height);
    img.channels = static_cast<int>(cinfo.output_components);
    if (img.channels != 1 && img.channels != 3) {
        jpeg_destroy_decompress(&cinfo);
        throw std::runtime_error("unsupported channel count in " + path.string());
    }
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = img.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * img.width * img.channels;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

}  // namespace

ImageU8 load_image(const std::filesystem::path& path) {
    FileHandle f(path, "rb");
    if (!f.fp) throw std::runtime_error("cannot open image: " + path.string());
    unsigned char sig[8] = {0};
    const std::size_t got = std::fread(sig, 1, sizeof(sig), f.fp);
    if (got >= 8 && png_sig_cmp(sig, 0, 8) == 0) return load_png_file(path);
    if (got >= 2 && sig[0] == 0xFF && sig[1] == 0xD8) return load_jpeg_file(path);
    throw std::runtime_error("undecodable image file (unknown format): " + path.string());
}

void save_png(const std::filesystem::path& path, const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("save_png: 1 or 3 channels required");
    FileHandle f(path, "wb");
    if (!f.fp) throw std::runtime_error("cannot write image: " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw std::runtime_error("png init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png write failed: " + path.string());
    }
    png_init_io(png, f.fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y)
        rows[static_cast<std::size_t>(y)] =
            const_cast<png_bytep>(img.pixels.data() + static_cast<std::size_t>(y) * img.width * img.channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

ImageU8 resize_bilinear(const ImageU8& img, int out_w, int out_h) {
    if (out_w <= 0 || out_h <= 0) throw std::invalid_argument("resize: target size must be positive");
    if (img.width <= 0 || img.height <= 0) throw std::invalid_argument("resize: zero-area image");
    if (img.width == out_w && img.height == out_h) return img;
    ImageU8 out;
    out.width = out_w;
    out.height = out_h;
    out.channels = img.channels;
    out.pixels.resize(static_cast<std::size_t>(out_w) * out_h * img.channels);
    const double sx = static_cast<double>(img.width) / out_w;
    const double sy = static_cast<double>(img.height) / out_h;
    for (int y = 0; y < out_h; ++y) {
        const double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        const double wy = fy - y0;
        int y1 = std::min(y0 + 1, img.height - 1);
        y0 = std::max(y0, 0);
        for (int x = 0; x < out_w; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            const double wx = fx - x0;
            int x1 = std::min(x0 + 1, img.width - 1);
            x0 = std::max(x0, 0);
            for (int c = 0; c < img.channels; ++c) {
                const double v00 = img.at(y0, x0, c), v01 = img.at(y0, x1, c);
                const double v10 = img.at(y1, x0, c), v11 = img.at(y1, x1, c);
                const double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
                out.pixels[(static_cast<std::size_t>(y) * out_w + x) * img.channels + c] =
                    static_cast<std::uint8_t>(std::lround(std::min(255.0, std::max(0.0, v))));
            }
        }
    }
    return out;
}

ImageU8 to_channels(const ImageU8& img, int channels) {
    if (channels != 1 && channels != 3) throw std::invalid_argument("to_channels: 1 or 3 required");
    if (img.channels == channels) return img;
    ImageU8 out;
    out.width = img.width;
    out.height = img.height;
    out.channels = channels;
    out.pixels.resize(static_cast<std::size_t>(img.width) * img.height * channels);
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
    if (channels == 1) {
        // ITU-R BT.601 luma
        for (std::size_t i = 0; i < n; ++i) {
            const double r = img.pixels[i * 3], g = img.pixels[i * 3 + 1], b = img.pixels[i * 3 + 2];
            out.pixels[i] = static_cast<std::uint8_t>(std::lround(0.299 * r + 0.587 * g + 0.114 * b));
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            out.pixels[i * 3] = out.pixels[i * 3 + 1] = out.pixels[i * 3 + 2] = img.pixels[i];
        }
    }
    return out;
}

Tensor image_to_tensor(const ImageU8& img) {
    Tensor t({img.channels, img.height, img.width});
    const std::size_t hw = static_cast<std::size_t>(img.height) * img.width;
    for (int c = 0; c < img.channels; ++c)
        for (std::size_t i = 0; i < hw; ++i) t[static_cast<std::size_t>(c) * hw + i] = img.pixels[i * img.channels + c] / 255.0f;
    return t;
}

ImageU8 tensor_to_image(const Tensor& t) {
    if (t.ndim() != 3) throw std::invalid_argument("tensor_to_image: expects (C,H,W)");
    ImageU8 img;
    img.channels = t.extent(0);
    img.height = t.extent(1);
    img.width = t.extent(2);
    img.pixels.resize(t.numel());
    const std::size_t hw = static_cast<std::size_t>(img.height) * img.width;
    for (int c = 0; c < img.channels; ++c)
        for (std::size_t i = 0; i < hw; ++i) {
            const float v = std::min(1.0f, std::max(0.0f, t[static_cast<std::size_t>(c) * hw + i]));
            img.pixels[i * img.channels + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    return img;
}

}  // namespace diffgen

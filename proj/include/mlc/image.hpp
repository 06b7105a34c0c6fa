#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "mlc/tensor.hpp"

// 8-bit RGB image io and pixel-space transforms. Images are rank-3 tensors
// (H, W, 3) with values in [0, 1] (byte / 255 on load). Transforms here run
// outside the autograd graph; they feed the input pipeline only.

namespace mlc {

inline Tensor<float> read_png(const std::string& path) {
    if (!std::filesystem::exists(path)) throw MissingImage("image not found: " + path);
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw DataError("png read failed for " + path + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&image);
        throw DataError("png decode failed for " + path + ": " + image.message);
    }
    const std::size_t h = image.height, w = image.width;
    std::vector<float> data(h * w * 3);
    for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = static_cast<float>(buffer[i]) / 255.0f;
    return Tensor<float>::from_data({h, w, 3}, std::move(data));
}

inline void write_png(const std::string& path, const Tensor<float>& img) {
    if (img.rank() != 3 || img.shape()[2] != 3)
        throw ShapeMismatch("write_png: expects (H,W,3), got " + shape_str(img.shape()));
    const std::size_t h = img.shape()[0], w = img.shape()[1];
    std::vector<unsigned char> buffer(h * w * 3);
    const auto& v = img.data();
    for (std::size_t i = 0; i < buffer.size(); ++i) {
        float x = std::clamp(v[i], 0.0f, 1.0f);
        buffer[i] = static_cast<unsigned char>(std::lround(x * 255.0f));
    }
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr))
        throw DataError("png write failed for " + path + ": " + image.message);
}

/// Bilinear resize with the pixel-center convention:
/// src = (dst + 0.5) * in/out - 0.5, clamped to the source extent.
inline Tensor<float> bilinear_resize(const Tensor<float>& img, std::size_t out_h,
                                     std::size_t out_w) {
    if (img.rank() != 3) throw ShapeMismatch("bilinear_resize: expects (H,W,C)");
    if (out_h == 0 || out_w == 0) throw ShapeMismatch("bilinear_resize: zero output extent");
    const std::size_t h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
    if (h == out_h && w == out_w) return img.detach();
    const auto& src = img.data();
    std::vector<float> dst(out_h * out_w * c);
    for (std::size_t oy = 0; oy < out_h; ++oy) {
        double sy = (static_cast<double>(oy) + 0.5) * static_cast<double>(h) /
                        static_cast<double>(out_h) -
                    0.5;
        sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
        const std::size_t y0 = static_cast<std::size_t>(sy);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            double sx = (static_cast<double>(ox) + 0.5) * static_cast<double>(w) /
                            static_cast<double>(out_w) -
                        0.5;
            sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
            const std::size_t x0 = static_cast<std::size_t>(sx);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const double fx = sx - static_cast<double>(x0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double v00 = src[(y0 * w + x0) * c + ch];
                const double v01 = src[(y0 * w + x1) * c + ch];
                const double v10 = src[(y1 * w + x0) * c + ch];
                const double v11 = src[(y1 * w + x1) * c + ch];
                const double top = v00 + (v01 - v00) * fx;
                const double bot = v10 + (v11 - v10) * fx;
                dst[(oy * out_w + ox) * c + ch] = static_cast<float>(top + (bot - top) * fy);
            }
        }
    }
    return Tensor<float>::from_data({out_h, out_w, c}, std::move(dst));
}

inline Tensor<float> hflip(const Tensor<float>& img) {
    if (img.rank() != 3) throw ShapeMismatch("hflip: expects (H,W,C)");
    const std::size_t h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
    const auto& src = img.data();
    std::vector<float> dst(src.size());
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch)
                dst[(y * w + x) * c + ch] = src[(y * w + (w - 1 - x)) * c + ch];
    return Tensor<float>::from_data(img.shape(), std::move(dst));
}

inline Tensor<float> vflip(const Tensor<float>& img) {
    if (img.rank() != 3) throw ShapeMismatch("vflip: expects (H,W,C)");
    const std::size_t h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
    const auto& src = img.data();
    std::vector<float> dst(src.size());
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch)
                dst[(y * w + x) * c + ch] = src[((h - 1 - y) * w + x) * c + ch];
    return Tensor<float>::from_data(img.shape(), std::move(dst));
}

/// Shifts content by (dy, dx); pixels shifted in from outside are zero.
inline Tensor<float> translate(const Tensor<float>& img, std::ptrdiff_t dy, std::ptrdiff_t dx) {
    if (img.rank() != 3) throw ShapeMismatch("translate: expects (H,W,C)");
    const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(img.shape()[0]);
    const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(img.shape()[1]);
    const std::size_t c = img.shape()[2];
    const auto& src = img.data();
    std::vector<float> dst(src.size(), 0.0f);
    for (std::ptrdiff_t y = 0; y < h; ++y) {
        const std::ptrdiff_t sy = y - dy;
        if (sy < 0 || sy >= h) continue;
        for (std::ptrdiff_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = x - dx;
            if (sx < 0 || sx >= w) continue;
            for (std::size_t ch = 0; ch < c; ++ch)
                dst[(static_cast<std::size_t>(y) * w + x) * c + ch] =
                    src[(static_cast<std::size_t>(sy) * w + sx) * c + ch];
        }
    }
    return Tensor<float>::from_data(img.shape(), std::move(dst));
}

/// Keeps the window [y0, y0+crop_h) x [x0, x0+crop_w) in place and zeroes
/// everything outside it.
inline Tensor<float> crop_zero_pad(const Tensor<float>& img, std::size_t y0, std::size_t x0,
                                   std::size_t crop_h, std::size_t crop_w) {
    if (img.rank() != 3) throw ShapeMismatch("crop_zero_pad: expects (H,W,C)");
    const std::size_t h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
    if (y0 + crop_h > h || x0 + crop_w > w)
        throw ShapeMismatch("crop_zero_pad: window exceeds image extent");
    const auto& src = img.data();
    std::vector<float> dst(src.size(), 0.0f);
    for (std::size_t y = y0; y < y0 + crop_h; ++y)
        for (std::size_t x = x0; x < x0 + crop_w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch)
                dst[(y * w + x) * c + ch] = src[(y * w + x) * c + ch];
    return Tensor<float>::from_data(img.shape(), std::move(dst));
}

}  // namespace mlc

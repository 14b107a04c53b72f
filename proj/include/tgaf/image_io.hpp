#pragma once

// Image and tensor file IO. Images are Tensor<float> [C,H,W] in [0,1].
// Supported on disk: binary PPM (P6), JPEG (system libjpeg), and the `.tns`
// float32 container for lossless adversarial outputs. PNG output is used for
// chart emission.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tgaf/tensor.hpp"

namespace tgaf::io {

void validate_image(const Tensor<float>& img, const std::string& what);

Tensor<float> load_image(const std::filesystem::path& path);
bool is_image_file(const std::filesystem::path& path);

Tensor<float> load_ppm(const std::filesystem::path& path);
void save_ppm(const Tensor<float>& img, const std::filesystem::path& path);

// JPEG via libjpeg; images are quantized to 8-bit on encode.
std::vector<unsigned char> encode_jpeg(const Tensor<float>& img, int quality);
Tensor<float> decode_jpeg(const std::vector<unsigned char>& bytes);
Tensor<float> load_jpeg(const std::filesystem::path& path);
std::string jpeg_codec_id();

// `.tns` float32 tensor container (magic TGAFTNS1, u32 rank, dims, payload).
void save_tensor(const Tensor<float>& t, const std::filesystem::path& path);
Tensor<float> load_tensor(const std::filesystem::path& path);

// 8-bit RGB PNG writer for plots; `rgb` is row-major, 3 bytes per pixel.
void save_png_rgb8(std::size_t width, std::size_t height, const std::vector<unsigned char>& rgb,
                   const std::filesystem::path& path);
void save_png(const Tensor<float>& img, const std::filesystem::path& path);

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& img, std::size_t out_h, std::size_t out_w) {
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    if (h == out_h && w == out_w) return img;
    Tensor<T> out({c, out_h, out_w});
    const double sy = static_cast<double>(h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(w) / static_cast<double>(out_w);
    for (std::size_t oy = 0; oy < out_h; ++oy) {
        double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
        fy = std::max(0.0, std::min(fy, static_cast<double>(h - 1)));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
            fx = std::max(0.0, std::min(fx, static_cast<double>(w - 1)));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::size_t ci = 0; ci < c; ++ci) {
                const double top = (1.0 - wx) * img.at3(ci, y0, x0) + wx * img.at3(ci, y0, x1);
                const double bot = (1.0 - wx) * img.at3(ci, y1, x0) + wx * img.at3(ci, y1, x1);
                out.at3(ci, oy, ox) = static_cast<T>((1.0 - wy) * top + wy * bot);
            }
        }
    }
    return out;
}

}  // namespace tgaf::io

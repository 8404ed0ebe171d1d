#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sigil/array.hpp"
#include "sigil/latent.hpp"

namespace sigil {

// Planar float image, values in [0,1], shape (C,H,W) with C in {1,3}.
struct Image {
    ArrayND<float> data;

    Image() = default;
    Image(int64_t c, int64_t h, int64_t w) : data({c, h, w}) {}

    int64_t channels() const { return data.dim(0); }
    int64_t height() const { return data.dim(1); }
    int64_t width() const { return data.dim(2); }

    float& at(int64_t c, int64_t y, int64_t x) { return data[(c * height() + y) * width() + x]; }
    float at(int64_t c, int64_t y, int64_t x) const { return data[(c * height() + y) * width() + x]; }
};

// 8-bit PNG IO (RGB for 3-channel, grayscale for 1-channel). Deterministic
// encoder settings so identical images give identical files.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

inline uint8_t quantize8(float v) {
    float x = v * 255.0f + 0.5f;
    if (x < 0) {
        x = 0;
    }
    if (x > 255) {
        x = 255;
    }
    return (uint8_t)x;
}

// Identity codec between pixel images in [0,1] and latents in [-1,1].
// Stands in for a VAE; lossless up to float rounding.
template <class T>
LatentGrid<T> encode_image(const Image& img) {
    ArrayND<T> z({1, img.channels(), img.height(), img.width()});
    for (int64_t i = 0; i < z.numel(); i++) {
        z[i] = (T)(img.data[i] * 2.0f - 1.0f);
    }
    return LatentGrid<T>(std::move(z), Space::latent);
}

template <class T>
Image decode_latent(const LatentGrid<T>& z) {
    Image img(z.channels(), z.height(), z.width());
    for (int64_t i = 0; i < img.data.numel(); i++) {
        float v     = ((float)z.data[i] + 1.0f) * 0.5f;
        img.data[i] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    }
    return img;
}

inline Image resize_bilinear(const Image& src, int64_t h, int64_t w) {
    Image out(src.channels(), h, w);
    const int64_t H = src.height(), W = src.width();
    for (int64_t c = 0; c < src.channels(); c++) {
        for (int64_t y = 0; y < h; y++) {
            double fy  = (h == 1) ? 0.0 : (double)y * (double)(H - 1) / (double)(h - 1);
            int64_t y0 = (int64_t)fy;
            int64_t y1 = std::min(y0 + 1, H - 1);
            double wy  = fy - (double)y0;
            for (int64_t x = 0; x < w; x++) {
                double fx  = (w == 1) ? 0.0 : (double)x * (double)(W - 1) / (double)(w - 1);
                int64_t x0 = (int64_t)fx;
                int64_t x1 = std::min(x0 + 1, W - 1);
                double wx  = fx - (double)x0;
                double v   = (1 - wy) * ((1 - wx) * src.at(c, y0, x0) + wx * src.at(c, y0, x1)) +
                           wy * ((1 - wx) * src.at(c, y1, x0) + wx * src.at(c, y1, x1));
                out.at(c, y, x) = (float)v;
            }
        }
    }
    return out;
}

// Aspect-preserving resize onto a neutral-gray square canvas.
inline Image letterbox_to_square(const Image& src, int64_t size, float pad_value = 0.5f) {
    Image out(src.channels(), size, size);
    std::fill(out.data.data(), out.data.data() + out.data.numel(), pad_value);
    int64_t H = src.height(), W = src.width();
    int64_t rh, rw;
    if (H >= W) {
        rh = size;
        rw = std::max<int64_t>(1, W * size / H);
    } else {
        rw = size;
        rh = std::max<int64_t>(1, H * size / W);
    }
    Image scaled = resize_bilinear(src, rh, rw);
    int64_t oy = (size - rh) / 2, ox = (size - rw) / 2;
    for (int64_t c = 0; c < src.channels(); c++) {
        for (int64_t y = 0; y < rh; y++) {
            for (int64_t x = 0; x < rw; x++) {
                out.at(c, oy + y, ox + x) = scaled.at(c, y, x);
            }
        }
    }
    return out;
}

inline double psnr(const ArrayND<float>& a, const ArrayND<float>& b, double peak = 2.0) {
    check_same_shape(a, b, "psnr");
    double mse = 0;
    for (int64_t i = 0; i < a.numel(); i++) {
        double d = (double)a[i] - (double)b[i];
        mse += d * d;
    }
    mse /= (double)a.numel();
    if (mse <= 0) {
        return 99.0;
    }
    return 10.0 * std::log10(peak * peak / mse);
}

}  // namespace sigil

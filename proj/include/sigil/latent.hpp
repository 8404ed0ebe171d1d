#pragma once

#include "sigil/array.hpp"

namespace sigil {

enum class Space { pixel, latent };

// Rank-4 (batch, channel, height, width) grid of image or latent values.
// With the identity codec the two spaces coincide numerically; the tag keeps
// module boundaries honest.
template <class T>
struct LatentGrid {
    ArrayND<T> data;
    Space space = Space::latent;

    LatentGrid() = default;
    LatentGrid(ArrayND<T> d, Space s) : data(std::move(d)), space(s) {
        if (data.rank() != 4) {
            throw std::invalid_argument("LatentGrid requires a rank-4 array, got " + shape_str(data.shape));
        }
    }

    int64_t batch() const { return data.dim(0); }
    int64_t channels() const { return data.dim(1); }
    int64_t height() const { return data.dim(2); }
    int64_t width() const { return data.dim(3); }
};

// Binary region mask, 1 = preserved scene background, 0 = customized region.
template <class T>
struct RegionMask {
    ArrayND<T> data;  // (1, 1, H, W) or (H, W)

    ArrayND<T> grid() const {
        if (data.rank() == 2) {
            return data.reshaped({1, 1, data.dim(0), data.dim(1)});
        }
        return data;
    }

    void validate_binary() const {
        for (int64_t i = 0; i < data.numel(); i++) {
            if (data[i] != T(0) && data[i] != T(1)) {
                throw std::invalid_argument("mask entries must be 0 or 1");
            }
        }
    }
};

// Nearest-neighbor resample of a (1,1,H,W) mask to (1,1,h,w).
template <class T>
ArrayND<T> resize_mask_nearest(const ArrayND<T>& mask, int64_t h, int64_t w) {
    ArrayND<T> m       = mask.rank() == 2 ? mask.reshaped({1, 1, mask.dim(0), mask.dim(1)}) : mask;
    const int64_t H    = m.dim(2), W = m.dim(3);
    ArrayND<T> out({1, 1, h, w});
    for (int64_t y = 0; y < h; y++) {
        int64_t sy = std::min(H - 1, (int64_t)((double)y * (double)H / (double)h));
        for (int64_t x = 0; x < w; x++) {
            int64_t sx       = std::min(W - 1, (int64_t)((double)x * (double)W / (double)w));
            out[y * w + x]   = m[sy * W + sx];
        }
    }
    return out;
}

}  // namespace sigil

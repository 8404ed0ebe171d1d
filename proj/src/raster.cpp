#include "sigil/raster.hpp"

#include <algorithm>
#include <cmath>

namespace sigil {

Color hsv_color(double h, double s, double v) {
    h        = h - std::floor(h);
    double c = v * s;
    double x = c * (1.0 - std::abs(std::fmod(h * 6.0, 2.0) - 1.0));
    double m = v - c;
    double r = 0, g = 0, b = 0;
    int k = (int)(h * 6.0) % 6;
    switch (k) {
        case 0: r = c; g = x; break;
        case 1: r = x; g = c; break;
        case 2: g = c; b = x; break;
        case 3: g = x; b = c; break;
        case 4: r = x; b = c; break;
        default: r = c; b = x; break;
    }
    return Color{(float)(r + m), (float)(g + m), (float)(b + m)};
}

static void put(Image& img, int64_t y, int64_t x, Color c) {
    if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) {
        return;
    }
    img.at(0, y, x) = c.r;
    if (img.channels() == 3) {
        img.at(1, y, x) = c.g;
        img.at(2, y, x) = c.b;
    }
}

void fill(Image& img, Color c) {
    fill_rect(img, 0, 0, img.width(), img.height(), c);
}

void fill_rect(Image& img, int64_t x0, int64_t y0, int64_t x1, int64_t y1, Color c) {
    x0 = std::max<int64_t>(0, x0);
    y0 = std::max<int64_t>(0, y0);
    x1 = std::min(img.width(), x1);
    y1 = std::min(img.height(), y1);
    for (int64_t y = y0; y < y1; y++) {
        for (int64_t x = x0; x < x1; x++) {
            put(img, y, x, c);
        }
    }
}

void fill_ellipse(Image& img, double cx, double cy, double rx, double ry, Color c) {
    int64_t y0 = (int64_t)std::floor(cy - ry), y1 = (int64_t)std::ceil(cy + ry);
    int64_t x0 = (int64_t)std::floor(cx - rx), x1 = (int64_t)std::ceil(cx + rx);
    for (int64_t y = y0; y <= y1; y++) {
        for (int64_t x = x0; x <= x1; x++) {
            double dx = ((double)x + 0.5 - cx) / rx;
            double dy = ((double)y + 0.5 - cy) / ry;
            if (dx * dx + dy * dy <= 1.0) {
                put(img, y, x, c);
            }
        }
    }
}

void fill_ring(Image& img, double cx, double cy, double r_out, double r_in, Color c) {
    int64_t y0 = (int64_t)std::floor(cy - r_out), y1 = (int64_t)std::ceil(cy + r_out);
    int64_t x0 = (int64_t)std::floor(cx - r_out), x1 = (int64_t)std::ceil(cx + r_out);
    for (int64_t y = y0; y <= y1; y++) {
        for (int64_t x = x0; x <= x1; x++) {
            double dx = (double)x + 0.5 - cx;
            double dy = (double)y + 0.5 - cy;
            double r2 = dx * dx + dy * dy;
            if (r2 <= r_out * r_out && r2 >= r_in * r_in) {
                put(img, y, x, c);
            }
        }
    }
}

void fill_triangle(Image& img, double ax, double ay, double bx, double by, double cx, double cy, Color c) {
    double minx = std::min({ax, bx, cx}), maxx = std::max({ax, bx, cx});
    double miny = std::min({ay, by, cy}), maxy = std::max({ay, by, cy});
    double area = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay);
    if (std::abs(area) < 1e-9) {
        return;
    }
    for (int64_t y = (int64_t)miny; y <= (int64_t)maxy; y++) {
        for (int64_t x = (int64_t)minx; x <= (int64_t)maxx; x++) {
            double px = (double)x + 0.5, py = (double)y + 0.5;
            double w0 = ((bx - ax) * (py - ay) - (px - ax) * (by - ay)) / area;
            double w1 = ((cx - bx) * (py - by) - (px - bx) * (cy - by)) / area;
            double w2 = ((ax - cx) * (py - cy) - (px - cx) * (ay - cy)) / area;
            if (w0 >= 0 && w1 >= 0 && w2 >= 0) {
                put(img, y, x, c);
            }
        }
    }
}

void thick_line(Image& img, double x0, double y0, double x1, double y1, double radius, Color c) {
    double len   = std::hypot(x1 - x0, y1 - y0);
    int64_t steps = std::max<int64_t>(2, (int64_t)(len * 2.0));
    for (int64_t s = 0; s <= steps; s++) {
        double t  = (double)s / (double)steps;
        double cx = x0 + (x1 - x0) * t;
        double cy = y0 + (y1 - y0) * t;
        fill_ellipse(img, cx, cy, radius, radius, c);
    }
}

void gradient(Image& img, Color top, Color bottom, bool diagonal) {
    for (int64_t y = 0; y < img.height(); y++) {
        for (int64_t x = 0; x < img.width(); x++) {
            double t = diagonal ? ((double)(x + y) / (double)(img.width() + img.height() - 2))
                                : ((double)y / (double)std::max<int64_t>(1, img.height() - 1));
            Color c{(float)(top.r + (bottom.r - top.r) * t),
                    (float)(top.g + (bottom.g - top.g) * t),
                    (float)(top.b + (bottom.b - top.b) * t)};
            put(img, y, x, c);
        }
    }
}

void stripes_rect(Image& img, int64_t x0, int64_t y0, int64_t x1, int64_t y1, int64_t period, bool vertical, Color a, Color b) {
    period = std::max<int64_t>(1, period);
    for (int64_t y = std::max<int64_t>(0, y0); y < std::min(img.height(), y1); y++) {
        for (int64_t x = std::max<int64_t>(0, x0); x < std::min(img.width(), x1); x++) {
            int64_t k = vertical ? (x - x0) / period : (y - y0) / period;
            put(img, y, x, (k % 2 == 0) ? a : b);
        }
    }
}

void checker_rect(Image& img, int64_t x0, int64_t y0, int64_t x1, int64_t y1, int64_t cell, Color a, Color b) {
    cell = std::max<int64_t>(1, cell);
    for (int64_t y = std::max<int64_t>(0, y0); y < std::min(img.height(), y1); y++) {
        for (int64_t x = std::max<int64_t>(0, x0); x < std::min(img.width(), x1); x++) {
            int64_t k = ((x - x0) / cell + (y - y0) / cell) % 2;
            put(img, y, x, k == 0 ? a : b);
        }
    }
}

void value_noise_overlay(Image& img, int64_t grid, float amplitude, Rng& rng) {
    grid = std::max<int64_t>(2, grid);
    std::vector<float> lattice((size_t)(grid * grid));
    for (auto& v : lattice) {
        v = (float)(rng.uniform() * 2.0 - 1.0);
    }
    for (int64_t y = 0; y < img.height(); y++) {
        double fy  = (double)y / (double)img.height() * (double)(grid - 1);
        int64_t y0 = (int64_t)fy;
        double wy  = fy - (double)y0;
        for (int64_t x = 0; x < img.width(); x++) {
            double fx  = (double)x / (double)img.width() * (double)(grid - 1);
            int64_t x0 = (int64_t)fx;
            double wx  = fx - (double)x0;
            double v00 = lattice[(size_t)(y0 * grid + x0)];
            double v01 = lattice[(size_t)(y0 * grid + std::min(x0 + 1, grid - 1))];
            double v10 = lattice[(size_t)(std::min(y0 + 1, grid - 1) * grid + x0)];
            double v11 = lattice[(size_t)(std::min(y0 + 1, grid - 1) * grid + std::min(x0 + 1, grid - 1))];
            double v   = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
            for (int64_t c = 0; c < img.channels(); c++) {
                float& p = img.at(c, y, x);
                p        = std::clamp(p + amplitude * (float)v, 0.0f, 1.0f);
            }
        }
    }
}

void block_glyph(Image& img, int64_t x0, int64_t y0, int64_t x1, int64_t y1, uint16_t bits, Color c) {
    const int64_t gw = 3, gh = 5;
    for (int64_t gy = 0; gy < gh; gy++) {
        for (int64_t gx = 0; gx < gw; gx++) {
            if (!(bits >> (gy * gw + gx) & 1)) {
                continue;
            }
            int64_t px0 = x0 + gx * (x1 - x0) / gw;
            int64_t px1 = x0 + (gx + 1) * (x1 - x0) / gw;
            int64_t py0 = y0 + gy * (y1 - y0) / gh;
            int64_t py1 = y0 + (gy + 1) * (y1 - y0) / gh;
            fill_rect(img, px0, py0, px1, py1, c);
        }
    }
}

}  // namespace sigil

#pragma once

#include "sigil/image.hpp"
#include "sigil/rng.hpp"

namespace sigil {

struct Color {
    float r = 0, g = 0, b = 0;
};

Color hsv_color(double h, double s, double v);

void fill(Image& img, Color c);
void fill_rect(Image& img, int64_t x0, int64_t y0, int64_t x1, int64_t y1, Color c);
void fill_ellipse(Image& img, double cx, double cy, double rx, double ry, Color c);
void fill_ring(Image& img, double cx, double cy, double r_out, double r_in, Color c);
void fill_triangle(Image& img, double x0, double y0, double x1, double y1, double x2, double y2, Color c);
void thick_line(Image& img, double x0, double y0, double x1, double y1, double radius, Color c);
void gradient(Image& img, Color top, Color bottom, bool diagonal);
void stripes_rect(Image& img, int64_t x0, int64_t y0, int64_t x1, int64_t y1, int64_t period, bool vertical, Color a, Color b);
void checker_rect(Image& img, int64_t x0, int64_t y0, int64_t x1, int64_t y1, int64_t cell, Color a, Color b);
void value_noise_overlay(Image& img, int64_t grid, float amplitude, Rng& rng);
// 3x5 block glyph scaled into [x0,x1)x[y0,y1); bits row-major from LSB
void block_glyph(Image& img, int64_t x0, int64_t y0, int64_t x1, int64_t y1, uint16_t bits, Color c);

}  // namespace sigil

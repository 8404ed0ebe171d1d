#include "sigil/data_synth.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace sigil {

Category parse_category(const std::string& s) {
    if (s == "glyph_text") {
        return Category::glyph_text;
    }
    if (s == "shape_logo") {
        return Category::shape_logo;
    }
    if (s == "tryon_patch") {
        return Category::tryon_patch;
    }
    throw std::invalid_argument("unknown category: " + s);
}

void SynthSpec::validate() const {
    if (image_size < 16) {
        throw std::invalid_argument("SynthSpec: image_size too small");
    }
    if (category_weights.size() != 3) {
        throw std::invalid_argument("SynthSpec: need 3 category weights");
    }
    double sum = 0;
    for (double w : category_weights) {
        if (w < 0) {
            throw std::invalid_argument("SynthSpec: negative weight");
        }
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("SynthSpec: weights must sum to 1");
    }
    if (!(mask_area_min > 0) || !(mask_area_min < mask_area_max) || !(mask_area_max < 1)) {
        throw std::invalid_argument("SynthSpec: need 0 < min < max < 1 mask area");
    }
}

double SamplePair::mask_area_fraction() const {
    int64_t zero = 0;
    for (int64_t i = 0; i < mask.data.numel(); i++) {
        zero += mask.data[i] < 0.5f ? 1 : 0;
    }
    return (double)zero / (double)mask.data.numel();
}

void SamplePair::validate(const SynthSpec& spec) const {
    double f = mask_area_fraction();
    if (f < spec.mask_area_min - 1e-9 || f > spec.mask_area_max + 1e-9) {
        throw std::runtime_error("SamplePair: mask area fraction out of range: " + std::to_string(f));
    }
    for (int64_t i = 0; i < mask.data.numel(); i++) {
        float v = mask.data[i];
        if (v != 0.0f && v != 1.0f) {
            throw std::runtime_error("SamplePair: non-binary mask");
        }
    }
    if (!all_finite(scene.data) || !all_finite(subject.data)) {
        throw std::runtime_error("SamplePair: non-finite pixels");
    }
}

// ------------------------------------------------------------- logo elements

namespace {

enum class ElemKind { plate, stripes, checker, ellipse, ring, rect, triangle, line, glyph };

struct LogoElement {
    ElemKind kind = ElemKind::rect;
    double p[8]   = {0};  // unit-space coordinates
    Color color;
    uint16_t bits = 0;
};

struct LogoSpec {
    std::vector<LogoElement> elements;
};

double jit(Rng& rng, double amount) { return (rng.uniform() * 2.0 - 1.0) * amount; }

Color jitter_color(Color c, Rng& rng, double amount) {
    auto clampf = [](double v) { return (float)std::clamp(v, 0.0, 1.0); };
    return Color{clampf(c.r + jit(rng, amount)), clampf(c.g + jit(rng, amount)), clampf(c.b + jit(rng, amount))};
}

std::vector<Color> make_palette(Rng& rng, int n) {
    std::vector<Color> out;
    double base = rng.uniform();
    for (int i = 0; i < n; i++) {
        double h = base + (double)i / (double)n + jit(rng, 0.05);
        double s = 0.55 + rng.uniform() * 0.4;
        double v = 0.35 + rng.uniform() * 0.6;
        out.push_back(hsv_color(h, s, v));
    }
    return out;
}

LogoSpec make_logo(Rng& rng, Category cat) {
    LogoSpec logo;
    auto palette = make_palette(rng, 4);
    switch (cat) {
        case Category::shape_logo: {
            logo.elements.push_back({ElemKind::plate, {}, palette[0], 0});
            int n = 1 + (int)rng.below(3);
            for (int i = 0; i < n; i++) {
                LogoElement e;
                e.color = palette[(size_t)(1 + rng.below(3))];
                switch (rng.below(4)) {
                    case 0:
                        e.kind = ElemKind::ellipse;
                        e.p[0] = 0.3 + jit(rng, 0.15);
                        e.p[1] = 0.3 + jit(rng, 0.15) + 0.2;
                        e.p[2] = 0.15 + rng.uniform() * 0.2;
                        e.p[3] = 0.15 + rng.uniform() * 0.2;
                        break;
                    case 1:
                        e.kind = ElemKind::ring;
                        e.p[0] = 0.5 + jit(rng, 0.1);
                        e.p[1] = 0.5 + jit(rng, 0.1);
                        e.p[2] = 0.2 + rng.uniform() * 0.2;
                        e.p[3] = e.p[2] * (0.45 + rng.uniform() * 0.3);
                        break;
                    case 2:
                        e.kind = ElemKind::rect;
                        e.p[0] = 0.15 + rng.uniform() * 0.3;
                        e.p[1] = 0.15 + rng.uniform() * 0.3;
                        e.p[2] = e.p[0] + 0.2 + rng.uniform() * 0.4;
                        e.p[3] = e.p[1] + 0.2 + rng.uniform() * 0.4;
                        break;
                    default:
                        e.kind = ElemKind::triangle;
                        e.p[0] = 0.2 + jit(rng, 0.1);
                        e.p[1] = 0.75 + jit(rng, 0.1);
                        e.p[2] = 0.8 + jit(rng, 0.1);
                        e.p[3] = 0.75 + jit(rng, 0.1);
                        e.p[4] = 0.5 + jit(rng, 0.15);
                        e.p[5] = 0.15 + jit(rng, 0.1);
                        break;
                }
                logo.elements.push_back(e);
            }
            break;
        }
        case Category::glyph_text: {
            logo.elements.push_back({ElemKind::plate, {}, palette[0], 0});
            int n      = 2 + (int)rng.below(4);
            Color ink  = palette[1];
            Color ink2 = palette[2];
            double pad = 0.06;
            double cw  = (1.0 - 2 * pad) / (double)n;
            for (int i = 0; i < n; i++) {
                LogoElement e;
                e.kind = ElemKind::glyph;
                e.p[0] = pad + cw * (double)i + cw * 0.08;
                e.p[1] = 0.25 + jit(rng, 0.05);
                e.p[2] = pad + cw * (double)(i + 1) - cw * 0.08;
                e.p[3] = 0.75 + jit(rng, 0.05);
                uint16_t bits = 0;
                int set       = 0;
                while (set < 6) {
                    bits = (uint16_t)(rng.next_u64() & 0x7fff);
                    set  = 0;
                    for (int b = 0; b < 15; b++) {
                        set += bits >> b & 1;
                    }
                }
                e.bits  = bits;
                e.color = rng.bernoulli(0.25) ? ink2 : ink;
                logo.elements.push_back(e);
            }
            break;
        }
        case Category::tryon_patch: {
            LogoElement fabric;
            fabric.kind  = rng.bernoulli(0.5) ? ElemKind::stripes : ElemKind::checker;
            fabric.p[0]  = 0.12 + rng.uniform() * 0.15;  // relative period
            fabric.p[1]  = rng.bernoulli(0.5) ? 1 : 0;
            fabric.color = palette[0];
            LogoElement fabric2 = fabric;
            fabric2.color       = palette[1];
            logo.elements.push_back(fabric);
            logo.elements.push_back(fabric2);
            LogoElement emblem;
            emblem.color = palette[2];
            if (rng.bernoulli(0.5)) {
                emblem.kind = ElemKind::ellipse;
                emblem.p[0] = 0.5;
                emblem.p[1] = 0.5;
                emblem.p[2] = 0.18 + rng.uniform() * 0.12;
                emblem.p[3] = emblem.p[2];
            } else {
                emblem.kind = ElemKind::triangle;
                emblem.p[0] = 0.3;
                emblem.p[1] = 0.68;
                emblem.p[2] = 0.7;
                emblem.p[3] = 0.68;
                emblem.p[4] = 0.5;
                emblem.p[5] = 0.28;
            }
            logo.elements.push_back(emblem);
            break;
        }
    }
    return logo;
}

void render_logo(Image& img, const LogoSpec& logo, int64_t x0, int64_t y0, int64_t x1, int64_t y1) {
    double w = (double)(x1 - x0), h = (double)(y1 - y0);
    auto X  = [&](double u) { return (double)x0 + u * w; };
    auto Y  = [&](double v) { return (double)y0 + v * h; };
    bool first_fabric = true;
    for (auto& e : logo.elements) {
        switch (e.kind) {
            case ElemKind::plate:
                fill_rect(img, x0, y0, x1, y1, e.color);
                break;
            case ElemKind::stripes: {
                if (first_fabric) {
                    fill_rect(img, x0, y0, x1, y1, e.color);
                    first_fabric = false;
                } else {
                    int64_t period = std::max<int64_t>(2, (int64_t)(e.p[0] * std::min(w, h)));
                    // second color drawn as alternating bands over the first
                    Image tmp = img;
                    stripes_rect(img, x0, y0, x1, y1, period, e.p[1] > 0.5, e.color, e.color);
                    for (int64_t y = std::max<int64_t>(0, y0); y < std::min(img.height(), y1); y++) {
                        for (int64_t x = std::max<int64_t>(0, x0); x < std::min(img.width(), x1); x++) {
                            int64_t k = e.p[1] > 0.5 ? (x - x0) / period : (y - y0) / period;
                            if (k % 2 == 0) {
                                for (int64_t c = 0; c < 3; c++) {
                                    img.at(c, y, x) = tmp.at(c, y, x);
                                }
                            }
                        }
                    }
                }
                break;
            }
            case ElemKind::checker: {
                if (first_fabric) {
                    fill_rect(img, x0, y0, x1, y1, e.color);
                    first_fabric = false;
                } else {
                    int64_t cell = std::max<int64_t>(2, (int64_t)(e.p[0] * std::min(w, h)));
                    Image tmp    = img;
                    for (int64_t y = std::max<int64_t>(0, y0); y < std::min(img.height(), y1); y++) {
                        for (int64_t x = std::max<int64_t>(0, x0); x < std::min(img.width(), x1); x++) {
                            int64_t k = ((x - x0) / cell + (y - y0) / cell) % 2;
                            if (k == 1) {
                                for (int64_t c = 0; c < 3; c++) {
                                    img.at(c, y, x) = e.color.r;  // overwritten below per channel
                                }
                                img.at(0, y, x) = e.color.r;
                                img.at(1, y, x) = e.color.g;
                                img.at(2, y, x) = e.color.b;
                            } else {
                                for (int64_t c = 0; c < 3; c++) {
                                    img.at(c, y, x) = tmp.at(c, y, x);
                                }
                            }
                        }
                    }
                }
                break;
            }
            case ElemKind::ellipse:
                fill_ellipse(img, X(e.p[0]), Y(e.p[1]), e.p[2] * w, e.p[3] * h, e.color);
                break;
            case ElemKind::ring:
                fill_ring(img, X(e.p[0]), Y(e.p[1]), e.p[2] * std::min(w, h), e.p[3] * std::min(w, h), e.color);
                break;
            case ElemKind::rect:
                fill_rect(img, (int64_t)X(e.p[0]), (int64_t)Y(e.p[1]), (int64_t)X(e.p[2]), (int64_t)Y(e.p[3]), e.color);
                break;
            case ElemKind::triangle:
                fill_triangle(img, X(e.p[0]), Y(e.p[1]), X(e.p[2]), Y(e.p[3]), X(e.p[4]), Y(e.p[5]), e.color);
                break;
            case ElemKind::line:
                thick_line(img, X(e.p[0]), Y(e.p[1]), X(e.p[2]), Y(e.p[3]), e.p[4] * std::min(w, h), e.color);
                break;
            case ElemKind::glyph:
                block_glyph(img, (int64_t)X(e.p[0]), (int64_t)Y(e.p[1]), (int64_t)X(e.p[2]), (int64_t)Y(e.p[3]), e.bits, e.color);
                break;
        }
    }
}

LogoSpec perturb_logo(const LogoSpec& logo, Rng& rng) {
    LogoSpec out = logo;
    for (size_t i = 0; i < out.elements.size(); i++) {
        auto& e = out.elements[i];
        if (e.kind == ElemKind::plate) {
            // re-colored neutral ground for the subject rendering
            double v = 0.75 + rng.uniform() * 0.2;
            e.color  = Color{(float)v, (float)v, (float)v};
            continue;
        }
        if (e.kind != ElemKind::stripes && e.kind != ElemKind::checker) {
            for (int k = 0; k < 6; k++) {
                e.p[k] += jit(rng, 0.008);
            }
        }
        e.color = jitter_color(e.color, rng, 0.03);
    }
    return out;
}

}  // namespace

SamplePair gen_pair(const SynthSpec& spec, int64_t index) {
    spec.validate();
    Rng rng(derive_seed(spec.rng_seed, {0x64617461ULL, (uint64_t)index}));
    const int64_t S = spec.image_size;

    SamplePair out;
    out.index = index;
    out.seed  = spec.rng_seed;

    // category by weight
    double u = rng.uniform();
    if (u < spec.category_weights[0]) {
        out.category = Category::glyph_text;
    } else if (u < spec.category_weights[0] + spec.category_weights[1]) {
        out.category = Category::shape_logo;
    } else {
        out.category = Category::tryon_patch;
    }

    // textured background
    out.scene = Image(3, S, S);
    auto bg_palette = make_palette(rng, 2);
    gradient(out.scene, bg_palette[0], bg_palette[1], rng.bernoulli(0.5));
    if (rng.bernoulli(0.7)) {
        value_noise_overlay(out.scene, 4 + (int64_t)rng.below(5), 0.08f + (float)rng.uniform() * 0.1f, rng);
    }

    // customized region rectangle within the area-fraction range
    int64_t rx0 = 0, ry0 = 0, rx1 = 0, ry1 = 0;
    bool placed = false;
    for (int attempt = 0; attempt < 100; attempt++) {
        double f      = rng.uniform(spec.mask_area_min, spec.mask_area_max);
        double aspect = 0.6 + rng.uniform() * 1.0;
        double wpx    = std::sqrt(f * (double)(S * S) * aspect);
        double hpx    = f * (double)(S * S) / wpx;
        int64_t w     = (int64_t)std::lround(wpx);
        int64_t h     = (int64_t)std::lround(hpx);
        if (w < 6 || h < 6 || w > S - 4 || h > S - 4) {
            continue;
        }
        rx0 = 2 + (int64_t)rng.below(S - w - 3);
        ry0 = 2 + (int64_t)rng.below(S - h - 3);
        rx1 = rx0 + w;
        ry1 = ry0 + h;
        double frac = (double)(w * h) / (double)(S * S);
        if (frac >= spec.mask_area_min && frac <= spec.mask_area_max) {
            placed = true;
            break;
        }
    }
    if (!placed) {
        throw std::runtime_error("gen_pair: failed to place region after 100 retries");
    }

    auto logo = make_logo(rng, out.category);
    render_logo(out.scene, logo, rx0, ry0, rx1, ry1);

    out.mask = Image(1, S, S);
    std::fill(out.mask.data.data(), out.mask.data.data() + out.mask.data.numel(), 1.0f);
    for (int64_t y = ry0; y < ry1; y++) {
        for (int64_t x = rx0; x < rx1; x++) {
            out.mask.at(0, y, x) = 0.0f;
        }
    }

    // subject: same logo re-rendered on neutral ground, slightly perturbed
    out.subject = Image(3, S, S);
    auto sub    = perturb_logo(logo, rng);
    Color ground = sub.elements.empty() ? Color{0.8f, 0.8f, 0.8f} : sub.elements[0].color;
    if (sub.elements[0].kind != ElemKind::plate) {
        double v = 0.8;
        ground   = Color{(float)v, (float)v, (float)v};
    }
    fill(out.subject, ground);
    int64_t margin = S / 10;
    render_logo(out.subject, sub, margin, margin, S - margin, S - margin);

    return out;
}

// ------------------------------------------------------------- augmentation

AugmentDraws draw_augment(uint64_t seed) {
    Rng rng(derive_seed(seed, {0x61756765ULL}));
    AugmentDraws d;
    d.flip      = rng.bernoulli(0.5);
    d.rotate    = rng.bernoulli(0.5);
    d.angle_deg = rng.uniform(-15.0, 15.0);
    d.distort   = rng.bernoulli(0.5);
    d.strength  = rng.uniform(0.0, 0.08);
    d.sharpen   = rng.bernoulli(0.5);
    return d;
}

Image flip_horizontal(const Image& img) {
    Image out(img.channels(), img.height(), img.width());
    for (int64_t c = 0; c < img.channels(); c++) {
        for (int64_t y = 0; y < img.height(); y++) {
            for (int64_t x = 0; x < img.width(); x++) {
                out.at(c, y, x) = img.at(c, y, img.width() - 1 - x);
            }
        }
    }
    return out;
}

void rotate_point(double cx, double cy, double angle_deg, double x, double y, double& ox, double& oy) {
    double a  = angle_deg * M_PI / 180.0;
    double dx = x - cx, dy = y - cy;
    ox = cx + dx * std::cos(a) - dy * std::sin(a);
    oy = cy + dx * std::sin(a) + dy * std::cos(a);
}

static float sample_clamped(const Image& img, int64_t c, double y, double x) {
    int64_t x0 = (int64_t)std::floor(x), y0 = (int64_t)std::floor(y);
    double wx = x - (double)x0, wy = y - (double)y0;
    auto gx = [&](int64_t yy, int64_t xx) {
        yy = std::clamp<int64_t>(yy, 0, img.height() - 1);
        xx = std::clamp<int64_t>(xx, 0, img.width() - 1);
        return (double)img.at(c, yy, xx);
    };
    return (float)((1 - wy) * ((1 - wx) * gx(y0, x0) + wx * gx(y0, x0 + 1)) +
                   wy * ((1 - wx) * gx(y0 + 1, x0) + wx * gx(y0 + 1, x0 + 1)));
}

Image apply_augment(const Image& subject, const AugmentDraws& d) {
    Image img = subject;
    if (d.flip) {
        img = flip_horizontal(img);
    }
    if (d.rotate && d.angle_deg != 0.0) {
        Image rot(img.channels(), img.height(), img.width());
        double cx = (double)img.width() / 2.0, cy = (double)img.height() / 2.0;
        for (int64_t y = 0; y < img.height(); y++) {
            for (int64_t x = 0; x < img.width(); x++) {
                double sx, sy;  // inverse map
                rotate_point(cx, cy, -d.angle_deg, (double)x + 0.5, (double)y + 0.5, sx, sy);
                for (int64_t c = 0; c < img.channels(); c++) {
                    rot.at(c, y, x) = sample_clamped(img, c, sy - 0.5, sx - 0.5);
                }
            }
        }
        img = rot;
    }
    if (d.distort && d.strength > 0.0) {
        Image dst(img.channels(), img.height(), img.width());
        double cx = (double)img.width() / 2.0, cy = (double)img.height() / 2.0;
        double rmax2 = cx * cx + cy * cy;
        for (int64_t y = 0; y < img.height(); y++) {
            for (int64_t x = 0; x < img.width(); x++) {
                double dx = (double)x + 0.5 - cx, dy = (double)y + 0.5 - cy;
                double k  = 1.0 + d.strength * ((dx * dx + dy * dy) / rmax2);
                for (int64_t c = 0; c < img.channels(); c++) {
                    dst.at(c, y, x) = sample_clamped(img, c, cy + dy * k - 0.5, cx + dx * k - 0.5);
                }
            }
        }
        img = dst;
    }
    if (d.sharpen) {
        Image sh(img.channels(), img.height(), img.width());
        const float s = 0.35f;
        for (int64_t c = 0; c < img.channels(); c++) {
            for (int64_t y = 0; y < img.height(); y++) {
                for (int64_t x = 0; x < img.width(); x++) {
                    auto gx = [&](int64_t yy, int64_t xx) {
                        yy = std::clamp<int64_t>(yy, 0, img.height() - 1);
                        xx = std::clamp<int64_t>(xx, 0, img.width() - 1);
                        return img.at(c, yy, xx);
                    };
                    float v = (1 + 4 * s) * gx(y, x) - s * (gx(y - 1, x) + gx(y + 1, x) + gx(y, x - 1) + gx(y, x + 1));
                    sh.at(c, y, x) = std::clamp(v, 0.0f, 1.0f);
                }
            }
        }
        img = sh;
    }
    return img;
}

Image augment_subject(const Image& subject, uint64_t seed) {
    return apply_augment(subject, draw_augment(seed));
}

// ------------------------------------------------------------- sampler + IO

WeightedSampler::WeightedSampler(std::vector<std::vector<int64_t>> category_indices,
                                 std::vector<double> weights, uint64_t seed)
    : indices_(std::move(category_indices)), rng_(derive_seed(seed, {0x73616d70ULL})) {
    if (indices_.size() != weights.size()) {
        throw std::invalid_argument("WeightedSampler: size mismatch");
    }
    double sum = 0;
    for (size_t i = 0; i < weights.size(); i++) {
        if (weights[i] < 0) {
            throw std::invalid_argument("WeightedSampler: negative weight");
        }
        if (weights[i] > 0 && indices_[i].empty()) {
            throw std::invalid_argument("WeightedSampler: empty category with positive weight");
        }
        sum += weights[i];
    }
    if (sum <= 0) {
        throw std::invalid_argument("WeightedSampler: zero total weight");
    }
    double acc = 0;
    for (double w : weights) {
        acc += w / sum;
        cumulative_.push_back(acc);
    }
    cursor_.assign(indices_.size(), 0);
}

int64_t WeightedSampler::next() {
    double u = rng_.uniform();
    size_t c = 0;
    while (c + 1 < cumulative_.size() && u >= cumulative_[c]) {
        c++;
    }
    while (indices_[c].empty()) {
        c = (c + 1) % indices_.size();
    }
    last_cat_    = (Category)c;
    int64_t idx  = indices_[c][cursor_[c] % indices_[c].size()];
    cursor_[c]++;
    return idx;
}

static std::string pad6(int64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06lld", (long long)v);
    return buf;
}

void write_dataset(const SynthSpec& spec, int64_t start_index, int64_t count, const std::string& dir) {
    spec.validate();
    fs::create_directories(dir);
    nlohmann::json meta = {
        {"format_version", 1},
        {"image_size", spec.image_size},
        {"category_weights", spec.category_weights},
        {"mask_area_min", spec.mask_area_min},
        {"mask_area_max", spec.mask_area_max},
        {"seed", spec.rng_seed},
        {"start_index", start_index},
        {"count", count},
    };
    std::ofstream meta_out(dir + "/dataset.json");
    meta_out << meta.dump(2) << "\n";

    std::ofstream manifest(dir + "/manifest.jsonl");
    for (int64_t i = 0; i < count; i++) {
        int64_t index = start_index + i;
        auto pair     = gen_pair(spec, index);
        pair.validate(spec);
        std::string stem = pad6(index);
        write_png(dir + "/" + stem + "_scene.png", pair.scene);
        write_png(dir + "/" + stem + "_mask.png", pair.mask);
        write_png(dir + "/" + stem + "_subject.png", pair.subject);
        nlohmann::json rec = {
            {"index", index},
            {"category", category_name(pair.category)},
            {"scene", stem + "_scene.png"},
            {"mask", stem + "_mask.png"},
            {"subject", stem + "_subject.png"},
            {"seed", spec.rng_seed},
        };
        manifest << rec.dump() << "\n";
    }
}

std::vector<ManifestEntry> read_manifest(const std::string& dir) {
    std::ifstream in(dir + "/manifest.jsonl");
    if (!in) {
        throw std::runtime_error("missing benchmark/dataset manifest: " + dir + "/manifest.jsonl");
    }
    std::vector<ManifestEntry> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        auto j = nlohmann::json::parse(line);
        ManifestEntry e;
        e.index        = j.at("index").get<int64_t>();
        e.category     = parse_category(j.at("category").get<std::string>());
        e.scene_path   = j.at("scene").get<std::string>();
        e.mask_path    = j.at("mask").get<std::string>();
        e.subject_path = j.at("subject").get<std::string>();
        e.seed         = j.at("seed").get<uint64_t>();
        out.push_back(e);
    }
    return out;
}

SamplePair load_pair(const std::string& dir, const ManifestEntry& entry) {
    SamplePair p;
    p.scene    = read_png(dir + "/" + entry.scene_path);
    p.mask     = read_png(dir + "/" + entry.mask_path);
    p.subject  = read_png(dir + "/" + entry.subject_path);
    p.category = entry.category;
    p.index    = entry.index;
    p.seed     = entry.seed;
    // snap mask to exact binary after 8-bit round trip
    for (int64_t i = 0; i < p.mask.data.numel(); i++) {
        p.mask.data[i] = p.mask.data[i] < 0.5f ? 0.0f : 1.0f;
    }
    return p;
}

}  // namespace sigil

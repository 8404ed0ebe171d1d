#pragma once

#include <json.hpp>

#include <map>

#include "sigil/compositor.hpp"
#include "sigil/threads.hpp"

namespace sigil {

struct RegionBox {
    int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

template <class T>
RegionBox region_bbox(const ArrayND<T>& mask) {
    const int64_t H = mask.dim(-2), W = mask.dim(-1);
    RegionBox b{W, H, 0, 0};
    const T* m = mask.data();
    for (int64_t y = 0; y < H; y++) {
        for (int64_t x = 0; x < W; x++) {
            if (m[y * W + x] == T(0)) {
                b.x0 = std::min(b.x0, x);
                b.y0 = std::min(b.y0, y);
                b.x1 = std::max(b.x1, x + 1);
                b.y1 = std::max(b.y1, y + 1);
            }
        }
    }
    if (b.x1 <= b.x0) {
        b = {0, 0, W, H};
    }
    return b;
}

struct PairMetrics {
    double region_l1   = 0;
    double region_psnr = 0;
    double patch_sim   = 0;
    double semantic_cos = 0;
};

// Region-restricted pixel metrics between the output and the ground-truth
// composite (the scene).
template <class T>
PairMetrics region_metrics(const ArrayND<T>& output, const ArrayND<T>& truth, const ArrayND<T>& mask) {
    const int64_t C = output.dim(1), H = output.dim(2), W = output.dim(3);
    const T* m = mask.data();
    double l1 = 0, mse = 0;
    int64_t n = 0;
    for (int64_t c = 0; c < C; c++) {
        for (int64_t i = 0; i < H * W; i++) {
            if (m[i] == T(0)) {
                double d = (double)output[c * H * W + i] - (double)truth[c * H * W + i];
                l1 += std::abs(d);
                mse += d * d;
                n++;
            }
        }
    }
    PairMetrics pm;
    pm.region_l1   = n > 0 ? l1 / (double)n : 0.0;
    double m2      = n > 0 ? mse / (double)n : 0.0;
    pm.region_psnr = m2 > 0 ? 10.0 * std::log10(4.0 / m2) : 99.0;

    // patch statistics over a 4x4 grid of the region bbox: per-patch mean and
    // stddev per channel, similarity = 1 / (1 + mean l1 distance)
    RegionBox b = region_bbox(mask);
    const int G = 4;
    double dist = 0;
    int64_t cnt = 0;
    for (int64_t c = 0; c < C; c++) {
        for (int gy = 0; gy < G; gy++) {
            for (int gx = 0; gx < G; gx++) {
                int64_t px0 = b.x0 + (b.x1 - b.x0) * gx / G;
                int64_t px1 = std::max(px0 + 1, b.x0 + (b.x1 - b.x0) * (gx + 1) / G);
                int64_t py0 = b.y0 + (b.y1 - b.y0) * gy / G;
                int64_t py1 = std::max(py0 + 1, b.y0 + (b.y1 - b.y0) * (gy + 1) / G);
                double ma = 0, mb = 0, va = 0, vb = 0;
                int64_t np = 0;
                for (int64_t y = py0; y < py1; y++) {
                    for (int64_t x = px0; x < px1; x++) {
                        ma += (double)output[(c * H + y) * W + x];
                        mb += (double)truth[(c * H + y) * W + x];
                        np++;
                    }
                }
                ma /= (double)np;
                mb /= (double)np;
                for (int64_t y = py0; y < py1; y++) {
                    for (int64_t x = px0; x < px1; x++) {
                        double da = (double)output[(c * H + y) * W + x] - ma;
                        double db = (double)truth[(c * H + y) * W + x] - mb;
                        va += da * da;
                        vb += db * db;
                    }
                }
                va = std::sqrt(va / (double)np);
                vb = std::sqrt(vb / (double)np);
                dist += std::abs(ma - mb) + std::abs(va - vb);
                cnt += 2;
            }
        }
    }
    pm.patch_sim = 1.0 / (1.0 + dist / (double)cnt);
    return pm;
}

// Global semantic feature from the trained conditional encoder: the pooled
// deepest pyramid level.
template <class T>
std::vector<double> semantic_global_feature(const Denoiser<T>& model, const ArrayND<T>& image) {
    Graph<T> g;
    g.grad_enabled = false;
    auto a3 = image.rank() == 4 ? image.reshaped({image.dim(1), image.dim(2), image.dim(3)}) : image;
    auto h  = g.constant(a3);
    for (int s = 0; s < model.cfg.num_scales; s++) {
        h = conv2d(h, model.pvar(g, "sem.conv" + std::to_string(s) + ".w"),
                   model.pvar(g, "sem.conv" + std::to_string(s) + ".b"), 2, 1);
        h = silu(h);
    }
    auto pooled = avgpool(h, h.dim(1), h.dim(2));
    std::vector<double> f((size_t)pooled.val().numel());
    for (size_t i = 0; i < f.size(); i++) {
        f[i] = (double)pooled.val()[(int64_t)i];
    }
    return f;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); i++) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    double den = std::sqrt(na) * std::sqrt(nb);
    return den > 0 ? dot / den : 0.0;
}

// Crop the region bbox out of a latent, resize to the model input, return as
// a (1,C,S,S) latent.
template <class T>
ArrayND<T> crop_region_latent(const ArrayND<T>& latent, const ArrayND<T>& mask, int out_size) {
    RegionBox b     = region_bbox(mask);
    const int64_t C = latent.dim(1), H = latent.dim(2), W = latent.dim(3);
    Image crop(C, b.y1 - b.y0, b.x1 - b.x0);
    for (int64_t c = 0; c < C; c++) {
        for (int64_t y = b.y0; y < b.y1; y++) {
            for (int64_t x = b.x0; x < b.x1; x++) {
                crop.at(c, y - b.y0, x - b.x0) = ((float)latent[(c * H + y) * W + x] + 1.0f) * 0.5f;
            }
        }
    }
    Image sq = letterbox_to_square(crop, out_size);
    ArrayND<T> out({1, C, (int64_t)out_size, (int64_t)out_size});
    for (int64_t i = 0; i < out.numel(); i++) {
        out[i] = (T)(sq.data[i] * 2.0f - 1.0f);
    }
    return out;
}

// In-distribution denoising loss of a frozen scorer model on an image, over a
// fixed probe set; negated so that higher means better quality.
template <class T>
double quality_score(const Denoiser<T>& scorer, const DiffusionSchedule& sched,
                     const ArrayND<T>& image_latent, uint64_t seed, int probes = 6) {
    double total = 0;
    ForwardOpts<T> opts;
    opts.delivery_sites = delivery_site_indices(scorer.cfg, DeliveryPosition::decoder);
    for (int j = 0; j < probes; j++) {
        int t      = (j * sched.num_train_steps) / probes + sched.num_train_steps / (2 * probes);
        auto noise = randn<T>(image_latent.shape, derive_seed(seed, {0x7175616cULL, (uint64_t)j}));
        auto z_t   = forward_diffuse(image_latent, t, noise, sched);
        Graph<T> g;
        g.grad_enabled = false;
        auto composed  = compose_input(z_t, ArrayND<T>::zeros(image_latent.shape),
                                       ArrayND<T>::zeros({1, 1, image_latent.dim(2), image_latent.dim(3)}));
        auto out = scorer.forward(g, composed, t, nullptr, nullptr, Mode::unconditional, opts);
        double mse = 0;
        for (int64_t i = 0; i < noise.numel(); i++) {
            double d = (double)noise[i] - (double)out.eps.val()[i];
            mse += d * d;
        }
        total += mse / (double)noise.numel();
    }
    return -total / (double)probes;
}

struct EvalReport {
    int64_t pairs       = 0;
    double region_l1    = 0;
    double region_psnr  = 0;
    double patch_sim    = 0;
    double semantic_cos = 0;
    double diversity    = 0;
    std::map<std::string, double> per_category_psnr;
    std::map<std::string, double> per_category_l1;

    bool operator==(const EvalReport&) const = default;

    nlohmann::json to_json() const {
        return nlohmann::json{
            {"pairs", pairs},           {"region_l1", region_l1},
            {"region_psnr", region_psnr}, {"patch_sim", patch_sim},
            {"semantic_cos", semantic_cos}, {"diversity", diversity},
            {"per_category_psnr", per_category_psnr}, {"per_category_l1", per_category_l1},
        };
    }
};

struct EvalOptions {
    int64_t max_pairs       = 32;
    int64_t diversity_subjects = 6;
    int64_t diversity_seeds = 8;
    double guidance         = 1.5;
    double lambda_inf       = 1.0;
    uint64_t seed           = 11;
    int threads             = 0;
    SystemKind system       = SystemKind::symbiotic;
    DeliveryPosition position = DeliveryPosition::decoder;
    const void* semantic_scorer = nullptr;  // const Denoiser<T>*; defaults to the model itself
};

// Customizes every benchmark pair and reports region-restricted fidelity
// against the ground-truth composite, plus a blocked-flow diversity score.
template <class T>
EvalReport evaluate(const Denoiser<T>& model, const DiffusionSchedule& sched,
                    const Dataset<T>& benchmark, const EvalOptions& opt) {
    if (benchmark.pairs.empty()) {
        throw std::invalid_argument("evaluate: missing benchmark");
    }
    const int64_t N = std::min<int64_t>(opt.max_pairs, (int64_t)benchmark.pairs.size());
    const Denoiser<T>* sem = opt.semantic_scorer ? (const Denoiser<T>*)opt.semantic_scorer : &model;

    std::vector<PairMetrics> metrics((size_t)N);
    std::vector<std::string> cats((size_t)N);
    parallel_for(N, opt.threads, [&](int64_t i) {
        const auto& p = benchmark.pairs[(size_t)i];
        CustomizationRequest<T> req;
        req.scene      = LatentGrid<T>(encode_image<T>(p.scene).data, Space::latent);
        req.subject    = LatentGrid<T>(encode_image<T>(p.subject).data, Space::latent);
        req.mask.data  = p.mask.data.template cast<T>().reshaped({1, 1, p.mask.height(), p.mask.width()});
        req.guidance   = opt.guidance;
        req.lambda_inf = opt.lambda_inf;
        req.seed       = derive_seed(opt.seed, {0x6576616cULL, (uint64_t)i});
        CompositorRun<T> run;
        run.system   = opt.system;
        run.position = opt.position;
        auto out     = customize_region(model, sched, req, run);

        auto pm = region_metrics(out.data, req.scene.data, req.mask.data);
        auto fa = semantic_global_feature(*sem, crop_region_latent(out.data, req.mask.data, sem->cfg.image_size));
        auto fb = semantic_global_feature(*sem, req.subject.data);
        pm.semantic_cos     = cosine(fa, fb);
        metrics[(size_t)i]  = pm;
        cats[(size_t)i]     = category_name(p.category);
    });

    EvalReport rep;
    rep.pairs = N;
    std::map<std::string, std::pair<double, int64_t>> cat_psnr, cat_l1;
    for (int64_t i = 0; i < N; i++) {
        rep.region_l1 += metrics[(size_t)i].region_l1 / (double)N;
        rep.region_psnr += metrics[(size_t)i].region_psnr / (double)N;
        rep.patch_sim += metrics[(size_t)i].patch_sim / (double)N;
        rep.semantic_cos += metrics[(size_t)i].semantic_cos / (double)N;
        cat_psnr[cats[(size_t)i]].first += metrics[(size_t)i].region_psnr;
        cat_psnr[cats[(size_t)i]].second++;
        cat_l1[cats[(size_t)i]].first += metrics[(size_t)i].region_l1;
        cat_l1[cats[(size_t)i]].second++;
    }
    for (auto& [cat, acc] : cat_psnr) {
        rep.per_category_psnr[cat] = acc.first / (double)acc.second;
    }
    for (auto& [cat, acc] : cat_l1) {
        rep.per_category_l1[cat] = acc.first / (double)acc.second;
    }

    // diversity: blocked signature flow, several seeds per subject, mean
    // pairwise region l2 distance
    const int64_t DS = std::min<int64_t>(opt.diversity_subjects, N);
    const int64_t K  = opt.diversity_seeds;
    if (DS > 0 && K > 1) {
        std::vector<double> subject_div((size_t)DS, 0.0);
        parallel_for(DS, opt.threads, [&](int64_t i) {
            const auto& p = benchmark.pairs[(size_t)i];
            std::vector<ArrayND<T>> outs;
            for (int64_t k = 0; k < K; k++) {
                CustomizationRequest<T> req;
                req.scene      = LatentGrid<T>(encode_image<T>(p.scene).data, Space::latent);
                req.subject    = LatentGrid<T>(encode_image<T>(p.subject).data, Space::latent);
                req.mask.data  = p.mask.data.template cast<T>().reshaped({1, 1, p.mask.height(), p.mask.width()});
                req.guidance   = opt.guidance;
                req.lambda_inf = 0.0;
                req.seed       = derive_seed(opt.seed, {0x646976ULL, (uint64_t)i, (uint64_t)k});
                CompositorRun<T> run;
                // blocked signature flow: bitwise-equal to zero delivery in
                // any system, so the blocked path is used for all of them
                run.system   = SystemKind::blocked;
                run.position = opt.position;
                outs.push_back(customize_region(model, sched, req, run).data);
            }
            double acc = 0;
            int64_t np = 0;
            const float* m = benchmark.pairs[(size_t)i].mask.data.data();
            for (int64_t a = 0; a < K; a++) {
                for (int64_t b = a + 1; b < K; b++) {
                    double d2 = 0;
                    int64_t n = 0;
                    const int64_t C = outs[(size_t)a].dim(1), HW = outs[(size_t)a].dim(2) * outs[(size_t)a].dim(3);
                    for (int64_t c = 0; c < C; c++) {
                        for (int64_t px = 0; px < HW; px++) {
                            if (m[px] == 0.0f) {
                                double d = (double)outs[(size_t)a][c * HW + px] - (double)outs[(size_t)b][c * HW + px];
                                d2 += d * d;
                                n++;
                            }
                        }
                    }
                    acc += std::sqrt(d2 / (double)std::max<int64_t>(1, n));
                    np++;
                }
            }
            subject_div[(size_t)i] = acc / (double)np;
        });
        for (int64_t i = 0; i < DS; i++) {
            rep.diversity += subject_div[(size_t)i] / (double)DS;
        }
    }
    return rep;
}

}  // namespace sigil

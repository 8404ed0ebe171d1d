#pragma once

#include <iostream>

#include "sigil/recycling.hpp"

namespace sigil {

template <class T>
struct CustomizationRequest {
    LatentGrid<T> scene;    // (1,C,H,W)
    RegionMask<T> mask;     // 1 = preserved background
    LatentGrid<T> subject;  // (1,C,H,W), letterboxed to model input
    double guidance   = 1.5;
    double lambda_inf = 1.0;  // delivery threshold at inference; 1 = full
    uint64_t seed     = 0;
};

template <class T>
struct CompositorRun {
    SystemKind system         = SystemKind::symbiotic;
    DeliveryPosition position = DeliveryPosition::decoder;
    int64_t steps_trained     = -1;  // warns when 0
    std::vector<AttentionTrace>* traces = nullptr;
};

template <class T>
ArrayND<T> blend_mask(const ArrayND<T>& keep_src, const ArrayND<T>& fill_src, const ArrayND<T>& mask) {
    // mask==1 keeps keep_src, mask==0 takes fill_src
    check_same_shape(keep_src, fill_src, "blend_mask");
    const int64_t C = keep_src.dim(1), HW = keep_src.dim(2) * keep_src.dim(3);
    ArrayND<T> out(keep_src.shape);
    for (int64_t c = 0; c < C; c++) {
        for (int64_t i = 0; i < HW; i++) {
            T m                = mask[i];
            out[c * HW + i]    = m * keep_src[c * HW + i] + (T(1) - m) * fill_src[c * HW + i];
        }
    }
    return out;
}

// Full region-customization sampling loop: at each grid step the gemini
// statuses produce the conditional eps, classifier-free guidance combines it
// with the unconditional branch, the sampler updates, and the scene latent at
// the next noise level is blended back under the mask. The final blend uses
// the clean scene, so the preserved background is exact.
template <class T>
LatentGrid<T> customize_region(const Denoiser<T>& model, const DiffusionSchedule& sched,
                               const CustomizationRequest<T>& req, const CompositorRun<T>& run = {}) {
    const auto& scene = req.scene.data;
    ArrayND<T> mask   = req.mask.grid();
    if (mask.dim(2) != scene.dim(2) || mask.dim(3) != scene.dim(3)) {
        throw std::invalid_argument("customize_region: mask/scene spatial mismatch");
    }
    check_same_shape(scene, req.subject.data, "customize_region: subject/scene");
    for (int64_t i = 0; i < mask.numel(); i++) {
        if (mask[i] != T(0) && mask[i] != T(1)) {
            throw std::invalid_argument("customize_region: mask must be binary");
        }
    }
    if (run.steps_trained == 0) {
        std::cerr << "warning: customizing with an untrained model\n";
    }

    SemanticTokens<T> tokens;
    bool conditioned = run.system != SystemKind::scorer;
    if (conditioned) {
        auto composed = compose_input(scene, scene, mask);
        tokens        = model.encode_semantic(req.subject.data,
                                              composed.masked_scene.reshaped(scene.shape));
    }

    ArrayND<T> z = randn<T>(scene.shape, derive_seed(req.seed, {0x696e6974ULL}));
    const auto& grid = sched.inference_grid;
    for (int k = (int)grid.size() - 1; k >= 0; k--) {
        int t      = grid[(size_t)k];
        int t_prev = k > 0 ? grid[(size_t)k - 1] : -1;

        Graph<T> g;
        g.grad_enabled = false;
        SemanticTokensVar<T> tok_vars;
        if (conditioned) {
            for (auto& grp : tokens.groups) {
                tok_vars.groups.push_back(g.constant(grp));
            }
            for (auto& bg : tokens.background) {
                tok_vars.background.push_back(g.constant(bg));
            }
        }

        auto subject_noise = randn<T>(req.subject.data.shape, derive_seed(req.seed, {0x73756265ULL, (uint64_t)t}));
        SparsePolicy policy(req.lambda_inf, derive_seed(req.seed, {0x73706172ULL, (uint64_t)t}));
        GeminiFlags flags;
        flags.training = false;
        flags.system   = run.system;
        flags.position = run.position;

        auto cond = gemini_step(g, model, z, scene, mask, req.subject.data, subject_noise, t,
                                conditioned ? &tok_vars : nullptr, policy, flags, sched);
        ArrayND<T> eps;
        if (req.guidance != 1.0) {
            GeminiFlags uflags  = flags;
            uflags.unconditional = true;
            auto uncond = gemini_step(g, model, z, scene, mask, req.subject.data, subject_noise, t,
                                      nullptr, policy, uflags, sched);
            eps = cfg_combine(uncond.eps.val(), cond.eps.val(), req.guidance);
        } else {
            eps = cond.eps.val();
        }
        if (run.traces) {
            run.traces->push_back(std::move(cond.trace));
        }

        z = sampler_step(z, t, t_prev, eps.reshaped(z.shape), sched);

        ArrayND<T> z_sce = scene;
        if (t_prev >= 0) {
            auto noise = randn<T>(scene.shape, derive_seed(req.seed, {0x7363656eULL, (uint64_t)k}));
            z_sce      = forward_diffuse(scene, t_prev, noise, sched);
        }
        z = blend_mask(z_sce, z, mask.reshaped({mask.dim(2) * mask.dim(3)}));
    }
    return LatentGrid<T>(z, Space::latent);
}

// Outpainting: the identical loop with the mask complemented in both the
// input composition and the blend; the subject region is preserved exactly
// and the background is regenerated.
template <class T>
LatentGrid<T> outpaint(const Denoiser<T>& model, const DiffusionSchedule& sched,
                       const CustomizationRequest<T>& req, const CompositorRun<T>& run = {}) {
    CustomizationRequest<T> flipped = req;
    ArrayND<T> m                    = req.mask.grid().clone();
    for (int64_t i = 0; i < m.numel(); i++) {
        m[i] = T(1) - m[i];
    }
    flipped.mask.data = m;
    return customize_region(model, sched, flipped, run);
}

// One customization per inference threshold under a shared seed.
template <class T>
std::vector<LatentGrid<T>> signature_sweep(const Denoiser<T>& model, const DiffusionSchedule& sched,
                                           const CustomizationRequest<T>& req,
                                           const std::vector<double>& lambdas,
                                           const CompositorRun<T>& run = {}) {
    if (lambdas.empty()) {
        throw std::invalid_argument("signature_sweep: empty lambda list");
    }
    std::vector<LatentGrid<T>> out;
    for (double l : lambdas) {
        CustomizationRequest<T> r = req;
        r.lambda_inf              = l;
        out.push_back(customize_region(model, sched, r, run));
    }
    return out;
}

}  // namespace sigil

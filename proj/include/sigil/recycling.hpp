#pragma once

#include "sigil/baselines.hpp"
#include "sigil/denoiser.hpp"
#include "sigil/diffusion.hpp"

namespace sigil {

// Per-layer independent stochastic compression of the signature flow:
// entry i is kept iff k <= lambda with k ~ U(0,1) drawn from a per-site
// stream derived from rng_seed.
struct SparsePolicy {
    double lambda          = 0.6;
    uint64_t rng_seed      = 0;
    bool per_layer_independent = true;  // fixed; one draw per delivery site

    SparsePolicy() = default;
    SparsePolicy(double l, uint64_t seed) : lambda(l), rng_seed(seed) {
        if (lambda < 0.0 || lambda > 1.0) {
            throw std::invalid_argument("SparsePolicy: lambda must be in [0,1]");
        }
    }
};

template <class T>
SignatureCache<T> sparse_transform(const SignatureCache<T>& cache, const SparsePolicy& policy) {
    SignatureCache<T> out;
    out.t = cache.t;
    out.entries.resize(cache.entries.size());
    for (size_t i = 0; i < cache.entries.size(); i++) {
        if (!cache.entries[i].has_value()) {
            continue;
        }
        Rng rng(derive_seed(policy.rng_seed, {0x73706172ULL, (uint64_t)i}));
        double k = rng.uniform_open();
        if (k <= policy.lambda) {
            out.entries[i] = cache.entries[i];
        }
    }
    return out;
}

struct GuidanceConfig {
    double w                   = 1.5;
    double condition_drop_prob = 0.1;

    GuidanceConfig() = default;
    GuidanceConfig(double scale, double drop) : w(scale), condition_drop_prob(drop) {
        if (w < 0.0 || drop < 0.0 || drop > 1.0) {
            throw std::invalid_argument("GuidanceConfig: bad values");
        }
    }
};

// eps_u + w (eps_c - eps_u)
template <class T>
ArrayND<T> cfg_combine(const ArrayND<T>& eps_uncond, const ArrayND<T>& eps_cond, double w) {
    check_same_shape(eps_uncond, eps_cond, "cfg_combine");
    ArrayND<T> out(eps_uncond.shape);
    for (int64_t i = 0; i < out.numel(); i++) {
        out[i] = eps_uncond[i] + (T)w * (eps_cond[i] - eps_uncond[i]);
    }
    return out;
}

enum class SystemKind { symbiotic, controlnet, referencenet, blocked, scorer };

inline SystemKind parse_system(const std::string& s) {
    if (s == "symbiotic") {
        return SystemKind::symbiotic;
    }
    if (s == "controlnet") {
        return SystemKind::controlnet;
    }
    if (s == "referencenet") {
        return SystemKind::referencenet;
    }
    if (s == "blocked") {
        return SystemKind::blocked;
    }
    if (s == "scorer") {
        return SystemKind::scorer;
    }
    throw std::invalid_argument("unknown system: " + s);
}

inline std::string system_name(SystemKind k) {
    switch (k) {
        case SystemKind::symbiotic: return "symbiotic";
        case SystemKind::controlnet: return "controlnet";
        case SystemKind::referencenet: return "referencenet";
        case SystemKind::blocked: return "blocked";
        case SystemKind::scorer: return "scorer";
    }
    return "?";
}

struct GeminiFlags {
    bool training     = true;
    bool unconditional = false;
    SystemKind system = SystemKind::symbiotic;
    DeliveryPosition position = DeliveryPosition::decoder;
};

template <class T>
struct GeminiOut {
    Var<T> eps;
    AttentionTrace trace;
    int delivered_count = 0;
};

// One denoising step of the gemini statuses at a shared timestep: signature
// extraction on the composed subject input, sparse delivery, then content
// generation. The loss side only ever sees the generation eps; nothing is
// attached to the extraction pass.
template <class T>
GeminiOut<T> gemini_step(Graph<T>& g, const Denoiser<T>& model,
                         const ArrayND<T>& z_t, const ArrayND<T>& scene, const ArrayND<T>& mask,
                         const ArrayND<T>& subject, const ArrayND<T>& subject_noise, int t,
                         const SemanticTokensVar<T>* tokens, const SparsePolicy& policy,
                         const GeminiFlags& flags, const DiffusionSchedule& sched) {
    ForwardOpts<T> opts;
    opts.delivery_sites = delivery_site_indices(model.cfg, flags.position);
    opts.region_mask    = &mask;

    auto composed = compose_input(z_t, scene, mask);
    GeminiOut<T> out;

    if (flags.unconditional || flags.system == SystemKind::scorer) {
        auto r  = model.forward(g, composed, t, nullptr, nullptr, Mode::unconditional, opts);
        out.eps = r.eps;
        out.trace = std::move(r.trace);
        return out;
    }
    if (flags.system == SystemKind::blocked) {
        auto r  = model.forward(g, composed, t, tokens, nullptr, Mode::blocked, opts);
        out.eps = r.eps;
        out.trace = std::move(r.trace);
        return out;
    }

    // subject branch forms its input space the same way: noisy subject at the
    // shared t, clean subject, all-ones mask
    ArrayND<T> ones          = ArrayND<T>::full({1, 1, subject.dim(-2), subject.dim(-1)}, T(1));
    ArrayND<T> subject_noisy = forward_diffuse(subject.rank() == 4 ? subject : subject.reshaped({1, subject.dim(0), subject.dim(1), subject.dim(2)}),
                                               t, subject_noise.rank() == 4 ? subject_noise : subject_noise.reshaped({1, subject_noise.dim(0), subject_noise.dim(1), subject_noise.dim(2)}),
                                               sched);
    auto subject_composed = compose_input(subject_noisy, subject, ones);

    if (flags.system == SystemKind::controlnet) {
        ForwardOpts<T> gen_opts = opts;
        auto residuals = control_forward(model, g, subject_composed, t, tokens);
        gen_opts.control_residuals = &residuals;
        auto r  = model.forward(g, composed, t, tokens, nullptr, Mode::blocked, gen_opts);
        out.eps = r.eps;
        out.trace = std::move(r.trace);
        return out;
    }

    SignatureCache<T> cache;
    if (flags.system == SystemKind::referencenet) {
        cache = reference_forward(model, g, subject_composed, t, tokens, opts.delivery_sites);
    } else {
        auto ext = model.forward(g, subject_composed, t, tokens, nullptr, Mode::extract, opts);
        cache    = std::move(*ext.cache_out);
    }
    SignatureCache<T> delivered = sparse_transform(cache, policy);
    out.delivered_count         = delivered.present_count();

    auto r    = model.forward(g, composed, t, tokens, &delivered, Mode::generate, opts);
    out.eps   = r.eps;
    out.trace = std::move(r.trace);
    return out;
}

}  // namespace sigil

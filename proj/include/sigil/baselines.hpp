#pragma once

#include "sigil/denoiser.hpp"

namespace sigil {

// The overconfigured-system assistants: an external extractor zeta delivering
// signatures into the base denoiser, either as per-scale residual grids
// (control_residual) or as a paralleled-network signature cache
// (reference_attention).
enum class AssistantKind { control_residual, reference_attention };

struct AssistantConfig {
    AssistantKind kind   = AssistantKind::reference_attention;
    bool shares_init_with_base = true;
    bool trainable             = true;
};

// Trainable copy of the base encoder path with zero-initialized 1x1 output
// adapters; returns one residual grid per decoder scale. base_activations,
// when given, is used for shape validation only.
template <class T>
std::vector<std::optional<Var<T>>> control_forward(const Denoiser<T>& model, Graph<T>& g,
                                                   const ComposedInput<T>& subject_input, int t,
                                                   const SemanticTokensVar<T>* tokens,
                                                   const std::vector<std::vector<int64_t>>* base_activations = nullptr) {
    const int S           = model.cfg.num_scales;
    const std::string pf  = "assistant.";
    if (!model.params.has(pf + "conv_in.w")) {
        throw std::invalid_argument("control_forward: no control assistant in this model");
    }
    auto h = concat_channels<T>({g.constant(subject_input.noisy), g.constant(subject_input.masked_scene),
                                 g.constant(subject_input.mask)});
    h      = conv2d(h, model.pvar(g, pf + "conv_in.w"), model.pvar(g, pf + "conv_in.b"), 1, 1);

    auto temb = g.constant(sinusoidal_embedding<T>(t, model.cfg.time_dim));
    temb      = silu(linear(temb, model.pvar(g, pf + "temb.l1.w"), model.pvar(g, pf + "temb.l1.b")));
    temb      = linear(temb, model.pvar(g, pf + "temb.l2.w"), model.pvar(g, pf + "temb.l2.b"));

    std::vector<std::optional<Var<T>>> residuals((size_t)S);
    for (int s = 0; s < S; s++) {
        std::string es = pf + "enc" + std::to_string(s);
        h              = model.res_block(g, es + ".res", h, temb, model.cfg.channels_at(s), model.cfg.channels_at(s));
        h              = model.cross_block(g, es + ".cross", h, tokens, model.cfg.group_index(Stage::encoder, s));
        auto r = conv2d(h, model.pvar(g, pf + "adapt" + std::to_string(s) + ".w"),
                        model.pvar(g, pf + "adapt" + std::to_string(s) + ".b"), 1, 0);
        if (base_activations) {
            if ((*base_activations)[(size_t)s] != r.shape()) {
                throw std::invalid_argument("control_forward: residual shape mismatch at scale " + std::to_string(s));
            }
        }
        residuals[(size_t)s] = r;
        if (s + 1 < S) {
            h = conv2d(h, model.pvar(g, pf + "down" + std::to_string(s) + ".w"),
                       model.pvar(g, pf + "down" + std::to_string(s) + ".b"), 2, 1);
        }
    }
    return residuals;
}

// Paralleled full copy of the denoiser run in extract mode; produces a
// SignatureCache with the same site layout as the recycling extraction pass.
// The only difference from the symbiotic system is which parameters filled
// the cache.
template <class T>
SignatureCache<T> reference_forward(const Denoiser<T>& model, Graph<T>& g,
                                    const ComposedInput<T>& subject_input, int t,
                                    const SemanticTokensVar<T>* tokens,
                                    const std::vector<int>& delivery_sites) {
    if (!model.params.has("assistant.out.conv.w")) {
        throw std::invalid_argument("reference_forward: no reference assistant in this model");
    }
    ForwardOpts<T> opts;
    opts.delivery_sites = delivery_sites;
    opts.prefix         = "assistant.";
    auto out = model.forward(g, subject_input, t, tokens, nullptr, Mode::extract, opts);
    return std::move(*out.cache_out);
}

}  // namespace sigil

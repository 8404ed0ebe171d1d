#pragma once

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sigil/graph.hpp"
#include "sigil/instrumentation.hpp"
#include "sigil/latent.hpp"
#include "sigil/params.hpp"

namespace sigil {

enum class Stage { encoder, middle, decoder };

struct AttnSite {
    Stage stage = Stage::decoder;
    int scale   = 0;  // unused for middle

    std::string name() const {
        switch (stage) {
            case Stage::encoder: return "enc" + std::to_string(scale);
            case Stage::middle: return "mid";
            case Stage::decoder: return "dec" + std::to_string(scale);
        }
        return "?";
    }
};

inline AttnSite parse_site(const std::string& s) {
    if (s == "mid") {
        return {Stage::middle, 0};
    }
    if (s.rfind("enc", 0) == 0) {
        return {Stage::encoder, std::stoi(s.substr(3))};
    }
    if (s.rfind("dec", 0) == 0) {
        return {Stage::decoder, std::stoi(s.substr(3))};
    }
    throw std::invalid_argument("bad self-attention site: " + s);
}

struct DenoiserConfig {
    int image_size      = 64;
    int latent_channels = 3;
    int base_channels   = 12;
    int num_scales      = 3;
    std::vector<AttnSite> self_attn_sites;  // canonical network order
    int token_count = 16;  // semantic tokens per group, excluding background
    int gn_groups   = 4;
    int time_dim    = 32;

    int channels_at(int scale) const { return base_channels << scale; }
    int resolution_at(int scale) const { return image_size >> scale; }
    int input_channels() const { return 2 * latent_channels + 1; }
    int num_token_groups() const { return 2 * num_scales; }

    // group order: enc0..enc{S-1}, dec{S-1}..dec0
    int group_index(Stage stage, int scale) const {
        if (stage == Stage::encoder) {
            return scale;
        }
        return num_scales + (num_scales - 1 - scale);
    }

    static std::vector<AttnSite> default_sites(int num_scales) {
        std::vector<AttnSite> sites;
        sites.push_back({Stage::middle, 0});
        for (int s = num_scales - 1; s >= 0; s--) {
            sites.push_back({Stage::decoder, s});
        }
        return sites;
    }

    void canonicalize_sites() {
        std::vector<AttnSite> ordered;
        for (int s = 0; s < num_scales; s++) {
            for (auto& site : self_attn_sites) {
                if (site.stage == Stage::encoder && site.scale == s) {
                    ordered.push_back(site);
                }
            }
        }
        for (auto& site : self_attn_sites) {
            if (site.stage == Stage::middle) {
                ordered.push_back(site);
            }
        }
        for (int s = num_scales - 1; s >= 0; s--) {
            for (auto& site : self_attn_sites) {
                if (site.stage == Stage::decoder && site.scale == s) {
                    ordered.push_back(site);
                }
            }
        }
        self_attn_sites = std::move(ordered);
    }

    void validate() const {
        if (num_scales < 2) {
            throw std::invalid_argument("DenoiserConfig: num_scales must be >= 2");
        }
        if (image_size % (1 << (num_scales - 1)) != 0) {
            throw std::invalid_argument("DenoiserConfig: image_size not divisible by scale factor");
        }
        for (int s = 0; s < num_scales; s++) {
            bool found = false;
            for (auto& site : self_attn_sites) {
                found = found || (site.stage == Stage::decoder && site.scale == s);
            }
            if (!found) {
                throw std::invalid_argument("DenoiserConfig: decoder scale " + std::to_string(s) + " has no self-attention site");
            }
            if (channels_at(s) <= 0 || channels_at(s) % gn_groups != 0) {
                throw std::invalid_argument("DenoiserConfig: channels at scale " + std::to_string(s) + " not divisible by gn_groups");
            }
        }
        for (auto& site : self_attn_sites) {
            if (site.stage != Stage::middle && (site.scale < 0 || site.scale >= num_scales)) {
                throw std::invalid_argument("DenoiserConfig: site scale out of range: " + site.name());
            }
        }
        int tg = (int)std::lround(std::sqrt((double)token_count));
        if (tg * tg != token_count) {
            throw std::invalid_argument("DenoiserConfig: token_count must be a perfect square");
        }
    }

    std::string sites_text() const {
        std::string s;
        for (size_t i = 0; i < self_attn_sites.size(); i++) {
            s += self_attn_sites[i].name();
            if (i + 1 < self_attn_sites.size()) {
                s += ",";
            }
        }
        return s;
    }
};

inline std::vector<AttnSite> parse_sites(const std::string& csv) {
    std::vector<AttnSite> out;
    std::string cur;
    for (char c : csv + ",") {
        if (c == ',') {
            if (!cur.empty()) {
                out.push_back(parse_site(cur));
            }
            cur.clear();
        } else if (!isspace((unsigned char)c)) {
            cur += c;
        }
    }
    return out;
}

// Signature-delivery position, the recycling-position ablation axis.
enum class DeliveryPosition { encoder, decoder, both };

inline DeliveryPosition parse_position(const std::string& s) {
    if (s == "encoder") {
        return DeliveryPosition::encoder;
    }
    if (s == "decoder") {
        return DeliveryPosition::decoder;
    }
    if (s == "both") {
        return DeliveryPosition::both;
    }
    throw std::invalid_argument("bad delivery position: " + s);
}

// Delivery sites under a position policy; the middle block counts as part of
// the decoder path.
inline std::vector<int> delivery_site_indices(const DenoiserConfig& cfg, DeliveryPosition pos) {
    std::vector<int> out;
    for (int i = 0; i < (int)cfg.self_attn_sites.size(); i++) {
        Stage st  = cfg.self_attn_sites[i].stage;
        bool dec  = st == Stage::middle || st == Stage::decoder;
        bool take = (pos == DeliveryPosition::both) || (pos == DeliveryPosition::decoder && dec) ||
                    (pos == DeliveryPosition::encoder && st == Stage::encoder);
        if (take) {
            out.push_back(i);
        }
    }
    return out;
}

// hat z_t: channel composition of the noisy latent, the masked scene latent
// and the interpolated binary mask.
template <class T>
struct ComposedInput {
    ArrayND<T> noisy;         // (C,H,W)
    ArrayND<T> masked_scene;  // (C,H,W)
    ArrayND<T> mask;          // (1,H,W), entries in {0,1}
};

// mask value 1 keeps the scene background; the customized region is zeroed
template <class T>
ComposedInput<T> compose_input(const ArrayND<T>& z_t, const ArrayND<T>& scene, const ArrayND<T>& mask_full) {
    ArrayND<T> z = z_t.rank() == 4 ? z_t.reshaped({z_t.dim(1), z_t.dim(2), z_t.dim(3)}) : z_t;
    ArrayND<T> s = scene.rank() == 4 ? scene.reshaped({scene.dim(1), scene.dim(2), scene.dim(3)}) : scene;
    check_same_shape(z, s, "compose_input");
    const int64_t H = z.dim(1), W = z.dim(2);
    ArrayND<T> m = resize_mask_nearest(mask_full, H, W).reshaped({1, H, W});
    for (int64_t i = 0; i < m.numel(); i++) {
        if (m[i] != T(0) && m[i] != T(1)) {
            throw std::invalid_argument("compose_input: mask entries must be 0 or 1");
        }
    }
    ComposedInput<T> out;
    out.noisy        = z;
    out.mask         = m;
    out.masked_scene = ArrayND<T>(s.shape);
    const int64_t C  = s.dim(0);
    for (int64_t c = 0; c < C; c++) {
        for (int64_t i = 0; i < H * W; i++) {
            out.masked_scene[c * H * W + i] = s[c * H * W + i] * m[i];
        }
    }
    return out;
}

// Hierarchical semantic token groups plus one global background token per
// group; the background token is concatenated to the group before injection.
template <class T>
struct SemanticTokensVar {
    std::vector<Var<T>> groups;      // (token_count, d_g)
    std::vector<Var<T>> background;  // (1, d_g)
};

template <class T>
struct SemanticTokens {
    std::vector<ArrayND<T>> groups;
    std::vector<ArrayND<T>> background;
};

// Ordered per-delivery-site store of subject hidden states captured at the
// pre-attention point (the inputs to the K/V projections), tagged with the
// timestep they were captured at.
template <class T>
struct SignatureCache {
    int t = -1;
    std::vector<std::optional<Var<T>>> entries;  // indexed by delivery-site order

    int present_count() const {
        int n = 0;
        for (auto& e : entries) {
            n += e.has_value() ? 1 : 0;
        }
        return n;
    }
};

enum class Mode { extract, generate, blocked, unconditional };

template <class T>
struct ForwardOpts {
    std::vector<int> delivery_sites;                          // site indices (network order)
    const ArrayND<T>* region_mask                  = nullptr;  // (1,1,H,W) full-res, for trace splits
    const std::vector<std::optional<Var<T>>>* control_residuals = nullptr;  // per decoder scale
    std::string prefix;                                       // "" or "assistant."
};

template <class T>
struct DenoiseOut {
    Var<T> eps;
    std::optional<SignatureCache<T>> cache_out;
    AttentionTrace trace;
};

template <class T>
ArrayND<T> sinusoidal_embedding(int t, int dim) {
    ArrayND<T> e({1, (int64_t)dim});
    int half = dim / 2;
    for (int i = 0; i < half; i++) {
        double freq      = std::exp(-std::log(10000.0) * (double)i / (double)half);
        e[2 * i]         = (T)std::sin((double)t * freq);
        e[2 * i + 1]     = (T)std::cos((double)t * freq);
    }
    return e;
}

// The single denoising network: a small U-shaped net with cross-attention
// semantic injection at every scale and self-attention sites instrumented for
// signature caching and mutual spatial attention. One instance also hosts the
// semantic encoder weights (names under "sem.") and, for the overconfigured
// baselines, an assistant copy (names under "assistant.").
template <class T>
struct Denoiser {
    DenoiserConfig cfg;
    ParamStore<T> params;

    static Denoiser init(const DenoiserConfig& config, uint64_t seed) {
        Denoiser d;
        d.cfg = config;
        d.cfg.canonicalize_sites();
        d.cfg.validate();
        Rng rng(derive_seed(seed, {0x6d6f64656cULL}));
        d.build_denoiser_params("", rng);
        d.build_semantic_params(rng);
        return d;
    }

    int64_t param_count() const { return params.total_params(); }

    // ---- parameter construction -------------------------------------------

    void add_gn(const std::string& p, int ch) {
        params.add(p + ".g", ArrayND<T>::full({(int64_t)ch}, T(1)));
        params.add(p + ".b", ArrayND<T>::zeros({(int64_t)ch}));
    }
    void add_conv(const std::string& p, int oc, int ic, int k, Rng& rng, bool zero = false) {
        if (zero) {
            params.add(p + ".w", ArrayND<T>::zeros({oc, ic, k, k}));
        } else {
            params.add(p + ".w", init_conv_weight<T>({oc, ic, k, k}, rng));
        }
        params.add(p + ".b", ArrayND<T>::zeros({(int64_t)oc}));
    }
    void add_linear(const std::string& p, int in, int out, Rng& rng, bool zero = false) {
        if (zero) {
            params.add(p + ".w", ArrayND<T>::zeros({in, out}));
        } else {
            params.add(p + ".w", init_linear_weight<T>(in, out, rng));
        }
        params.add(p + ".b", ArrayND<T>::zeros({(int64_t)out}));
    }
    void add_res(const std::string& p, int ic, int oc, Rng& rng) {
        add_gn(p + ".norm1", ic);
        add_conv(p + ".conv1", oc, ic, 3, rng);
        add_linear(p + ".temb", cfg.time_dim, oc, rng);
        add_gn(p + ".norm2", oc);
        add_conv(p + ".conv2", oc, oc, 3, rng);
        if (ic != oc) {
            add_conv(p + ".skip", oc, ic, 1, rng);
        }
    }
    // attention out projections start at zero so signature delivery is a
    // no-op at initialization and training starts from vanilla generation
    void add_attn(const std::string& p, int ch, int kv_dim, Rng& rng) {
        add_gn(p + ".norm", ch);
        add_linear(p + ".q", ch, ch, rng);
        add_linear(p + ".k", kv_dim, ch, rng);
        add_linear(p + ".v", kv_dim, ch, rng);
        add_linear(p + ".o", ch, ch, rng, /*zero=*/true);
    }

    bool has_site(Stage stage, int scale) const {
        for (auto& s : cfg.self_attn_sites) {
            if (s.stage == stage && (stage == Stage::middle || s.scale == scale)) {
                return true;
            }
        }
        return false;
    }

    void build_denoiser_params(const std::string& pf, Rng& rng) {
        const int S = cfg.num_scales;
        add_conv(pf + "conv_in", cfg.channels_at(0), cfg.input_channels(), 3, rng);
        add_linear(pf + "temb.l1", cfg.time_dim, cfg.time_dim, rng);
        add_linear(pf + "temb.l2", cfg.time_dim, cfg.time_dim, rng);
        for (int s = 0; s < S; s++) {
            int ch = cfg.channels_at(s);
            add_res(pf + "enc" + std::to_string(s) + ".res", ch, ch, rng);
            add_attn(pf + "enc" + std::to_string(s) + ".cross", ch, ch, rng);
            if (has_site(Stage::encoder, s)) {
                add_attn(pf + "enc" + std::to_string(s) + ".self", ch, ch, rng);
            }
            if (s + 1 < S) {
                add_conv(pf + "down" + std::to_string(s), cfg.channels_at(s + 1), ch, 3, rng);
            }
        }
        int mc = cfg.channels_at(S - 1);
        add_res(pf + "mid.res1", mc, mc, rng);
        if (has_site(Stage::middle, 0)) {
            add_attn(pf + "mid.self", mc, mc, rng);
        }
        add_res(pf + "mid.res2", mc, mc, rng);
        for (int s = S - 1; s >= 0; s--) {
            int ch = cfg.channels_at(s);
            add_res(pf + "dec" + std::to_string(s) + ".res", 2 * ch, ch, rng);
            add_attn(pf + "dec" + std::to_string(s) + ".cross", ch, ch, rng);
            if (has_site(Stage::decoder, s)) {
                add_attn(pf + "dec" + std::to_string(s) + ".self", ch, ch, rng);
            }
            if (s > 0) {
                add_conv(pf + "up" + std::to_string(s), cfg.channels_at(s - 1), ch, 3, rng);
            }
        }
        add_gn(pf + "out.norm", cfg.channels_at(0));
        // zero-init output conv: eps prediction starts at exactly 0
        add_conv(pf + "out.conv", cfg.latent_channels, cfg.channels_at(0), 3, rng, /*zero=*/true);
    }

    void build_semantic_params(Rng& rng) {
        const int S = cfg.num_scales;
        int prev    = cfg.latent_channels;
        for (int s = 0; s < S; s++) {
            add_conv("sem.conv" + std::to_string(s), cfg.channels_at(s), prev, 3, rng);
            prev = cfg.channels_at(s);
        }
        for (int s = 0; s < S; s++) {
            int ch = cfg.channels_at(s);
            add_linear("sem.proj_enc" + std::to_string(s), ch, ch, rng);
            add_linear("sem.proj_dec" + std::to_string(s), ch, ch, rng);
            add_linear("sem.bg_enc" + std::to_string(s), cfg.channels_at(S - 1), ch, rng);
            add_linear("sem.bg_dec" + std::to_string(s), cfg.channels_at(S - 1), ch, rng);
        }
    }

    // Assistant encoder copy (shares init with base) + zero 1x1 adapters,
    // providing per-decoder-scale residual grids.
    void add_control_assistant(uint64_t seed) {
        Rng rng(derive_seed(seed, {0x61737374ULL}));
        const int S = cfg.num_scales;
        ParamStore<T> tmp;
        std::swap(tmp, params);
        build_denoiser_params("assistant.", rng);
        std::swap(tmp, params);
        for (auto& name : tmp.names) {
            if (name.rfind("assistant.", 0) != 0) {
                continue;
            }
            bool enc_part = name.find("assistant.conv_in") == 0 || name.find("assistant.temb") == 0 ||
                            name.find("assistant.enc") == 0 || name.find("assistant.down") == 0;
            enc_part      = enc_part && name.find(".self.") == std::string::npos;
            if (enc_part) {
                params.add(name, tmp.at(name).clone());
            }
        }
        for (int s = 0; s < S; s++) {
            int ch = cfg.channels_at(s);
            params.add("assistant.adapt" + std::to_string(s) + ".w", ArrayND<T>::zeros({ch, ch, 1, 1}));
            params.add("assistant.adapt" + std::to_string(s) + ".b", ArrayND<T>::zeros({(int64_t)ch}));
        }
        params.copy_values_from(params, "", "assistant.");
    }

    // Full separate copy of the denoiser, initialized from the base weights.
    void add_reference_assistant(uint64_t seed) {
        Rng rng(derive_seed(seed, {0x72656661ULL}));
        build_denoiser_params("assistant.", rng);
        params.copy_values_from(params, "", "assistant.");
    }

    // ---- forward ------------------------------------------------------------

    Var<T> pvar(Graph<T>& g, const std::string& name) const {
        return g.param(name, params.at(name));
    }

    Var<T> res_block(Graph<T>& g, const std::string& p, Var<T> h, Var<T> temb, int ic, int oc) const {
        auto x = groupnorm(h, pvar(g, p + ".norm1.g"), pvar(g, p + ".norm1.b"), cfg.gn_groups);
        x      = silu(x);
        x      = conv2d(x, pvar(g, p + ".conv1.w"), pvar(g, p + ".conv1.b"), 1, 1);
        auto tb = linear(temb, pvar(g, p + ".temb.w"), pvar(g, p + ".temb.b"));
        x      = add_channel_bias(x, reshape(tb, {(int64_t)oc}));
        x      = groupnorm(x, pvar(g, p + ".norm2.g"), pvar(g, p + ".norm2.b"), cfg.gn_groups);
        x      = silu(x);
        x      = conv2d(x, pvar(g, p + ".conv2.w"), pvar(g, p + ".conv2.b"), 1, 1);
        auto skip = (ic == oc) ? h : conv2d(h, pvar(g, p + ".skip.w"), pvar(g, p + ".skip.b"), 1, 0);
        return add(x, skip);
    }

    Var<T> cross_block(Graph<T>& g, const std::string& p, Var<T> h, const SemanticTokensVar<T>* tokens, int gi) const {
        if (!tokens) {
            return h;  // null condition: no injection
        }
        const int64_t C = h.dim(0), H = h.dim(1), W = h.dim(2);
        auto n    = groupnorm(h, pvar(g, p + ".norm.g"), pvar(g, p + ".norm.b"), cfg.gn_groups);
        auto seq  = transpose2d(reshape(n, {C, H * W}));
        auto toks = concat_rows(tokens->groups[(size_t)gi], tokens->background[(size_t)gi]);
        auto q    = linear(seq, pvar(g, p + ".q.w"), pvar(g, p + ".q.b"));
        auto k    = linear(toks, pvar(g, p + ".k.w"), pvar(g, p + ".k.b"));
        auto v    = linear(toks, pvar(g, p + ".v.w"), pvar(g, p + ".v.b"));
        auto o    = attention_core(q, k, v, k.dim(0));
        o         = linear(o, pvar(g, p + ".o.w"), pvar(g, p + ".o.b"));
        return add(h, reshape(transpose2d(o), {C, H, W}));
    }

    // Self-attention with optional mutual spatial attention: K/V come from the
    // row concatenation of the generation tokens and the delivered subject
    // tokens. Captures pre-attention hidden states in extract mode.
    Var<T> self_block(Graph<T>& g, const std::string& p, Var<T> h, int site_index, int t, Mode mode,
                      const SignatureCache<T>* cache_in, SignatureCache<T>* cache_out,
                      const ForwardOpts<T>& opts, AttentionTrace* trace, int delivery_slot) const {
        const int64_t C = h.dim(0), H = h.dim(1), W = h.dim(2);
        auto n   = groupnorm(h, pvar(g, p + ".norm.g"), pvar(g, p + ".norm.b"), cfg.gn_groups);
        auto seq = transpose2d(reshape(n, {C, H * W}));

        bool is_delivery = delivery_slot >= 0;
        if (mode == Mode::extract && is_delivery && cache_out) {
            cache_out->entries[(size_t)delivery_slot] = seq;
        }

        Var<T> kv_src   = seq;
        bool delivered  = false;
        Var<T> cached;
        if (mode == Mode::generate && is_delivery && cache_in && cache_in->entries[(size_t)delivery_slot].has_value()) {
            cached    = *cache_in->entries[(size_t)delivery_slot];
            if (cached.dim(1) != C) {
                throw std::invalid_argument("self_block: cached token width mismatch at site " + std::to_string(site_index));
            }
            kv_src    = concat_rows(seq, cached);
            delivered = true;
        }

        auto q = linear(seq, pvar(g, p + ".q.w"), pvar(g, p + ".q.b"));
        auto k = linear(kv_src, pvar(g, p + ".k.w"), pvar(g, p + ".k.b"));
        auto v = linear(kv_src, pvar(g, p + ".v.w"), pvar(g, p + ".v.b"));

        AttnMasses masses;
        bool want_trace = trace && mode != Mode::extract && is_delivery;
        auto o          = attention_core(q, k, v, H * W, want_trace ? &masses : nullptr);
        o               = linear(o, pvar(g, p + ".o.w"), pvar(g, p + ".o.b"));

        if (want_trace) {
            SiteTraceRecord rec;
            rec.site_index = delivery_slot;
            rec.site_name  = cfg.self_attn_sites[(size_t)site_index].name();
            rec.t          = t;
            rec.delivered  = delivered;
            rec.n_queries  = H * W;
            double total   = 0;
            for (double m : masses.subject_mass) {
                total += m;
            }
            rec.subject_mass = total / (double)masses.subject_mass.size();
            rec.gen_mass     = 1.0 - rec.subject_mass;
            if (opts.region_mask) {
                ArrayND<T> m = resize_mask_nearest(*opts.region_mask, H, W);
                double sc = 0, sb = 0;
                int64_t nc = 0, nb = 0;
                for (int64_t i = 0; i < H * W; i++) {
                    if (m[i] == T(0)) {
                        sc += masses.subject_mass[(size_t)i];
                        nc++;
                    } else {
                        sb += masses.subject_mass[(size_t)i];
                        nb++;
                    }
                }
                rec.n_region_queries     = nc;
                rec.n_background_queries = nb;
                rec.subject_mass_region  = nc > 0 ? sc / (double)nc : 0.0;
                rec.subject_mass_background = nb > 0 ? sb / (double)nb : 0.0;
            }
            double mg = 0;
            for (int64_t i = 0; i < seq.val().numel(); i++) {
                mg += (double)seq.val()[i];
            }
            rec.mean_gen_hidden = mg / (double)seq.val().numel();
            if (delivered) {
                double ms = 0;
                for (int64_t i = 0; i < cached.val().numel(); i++) {
                    ms += (double)cached.val()[i];
                }
                rec.mean_subject_hidden = ms / (double)cached.val().numel();
            }
            trace->records.push_back(rec);
        }
        return add(h, reshape(transpose2d(o), {C, H, W}));
    }

    DenoiseOut<T> forward(Graph<T>& g, const ComposedInput<T>& x, int t,
                          const SemanticTokensVar<T>* tokens, const SignatureCache<T>* cache_in,
                          Mode mode, const ForwardOpts<T>& opts) const {
        if (mode == Mode::unconditional) {
            tokens   = nullptr;
            cache_in = nullptr;
        }
        if (mode == Mode::blocked) {
            cache_in = nullptr;
        }
        if (mode == Mode::generate) {
            if (!cache_in) {
                throw std::invalid_argument("denoise_forward: generate mode requires a cache (entries may be absent)");
            }
            if ((int)cache_in->entries.size() != (int)opts.delivery_sites.size()) {
                throw std::invalid_argument("denoise_forward: cache/site mismatch: " +
                                            std::to_string(cache_in->entries.size()) + " entries vs " +
                                            std::to_string(opts.delivery_sites.size()) + " sites");
            }
            if (cache_in->present_count() > 0 && cache_in->t != t) {
                throw std::invalid_argument("denoise_forward: cache timestep tag " + std::to_string(cache_in->t) +
                                            " consumed at t=" + std::to_string(t));
            }
        }
        if ((int64_t)x.noisy.dim(0) != cfg.latent_channels) {
            throw std::invalid_argument("denoise_forward: latent channel mismatch");
        }
        check_same_shape(x.noisy, x.masked_scene, "denoise_forward");

        const std::string& pf = opts.prefix;
        const int S           = cfg.num_scales;

        DenoiseOut<T> out;
        if (mode == Mode::extract) {
            out.cache_out = SignatureCache<T>{};
            out.cache_out->t = t;
            out.cache_out->entries.resize(opts.delivery_sites.size());
        }

        auto slot_of = [&](int site_index) {
            for (size_t i = 0; i < opts.delivery_sites.size(); i++) {
                if (opts.delivery_sites[i] == site_index) {
                    return (int)i;
                }
            }
            return -1;
        };
        auto site_index_of = [&](Stage stage, int scale) {
            for (int i = 0; i < (int)cfg.self_attn_sites.size(); i++) {
                auto& s = cfg.self_attn_sites[(size_t)i];
                if (s.stage == stage && (stage == Stage::middle || s.scale == scale)) {
                    return i;
                }
            }
            return -1;
        };

        auto h = concat_channels<T>({g.constant(x.noisy), g.constant(x.masked_scene), g.constant(x.mask)});
        h      = conv2d(h, pvar(g, pf + "conv_in.w"), pvar(g, pf + "conv_in.b"), 1, 1);

        auto temb = g.constant(sinusoidal_embedding<T>(t, cfg.time_dim));
        temb      = silu(linear(temb, pvar(g, pf + "temb.l1.w"), pvar(g, pf + "temb.l1.b")));
        temb      = linear(temb, pvar(g, pf + "temb.l2.w"), pvar(g, pf + "temb.l2.b"));

        std::vector<Var<T>> skips;
        for (int s = 0; s < S; s++) {
            std::string es = pf + "enc" + std::to_string(s);
            h              = res_block(g, es + ".res", h, temb, cfg.channels_at(s), cfg.channels_at(s));
            h              = cross_block(g, es + ".cross", h, tokens, cfg.group_index(Stage::encoder, s));
            int si         = site_index_of(Stage::encoder, s);
            if (si >= 0) {
                h = self_block(g, es + ".self", h, si, t, mode, cache_in, out.cache_out ? &*out.cache_out : nullptr,
                               opts, &out.trace, slot_of(si));
            }
            skips.push_back(h);
            if (s + 1 < S) {
                h = conv2d(h, pvar(g, pf + "down" + std::to_string(s) + ".w"), pvar(g, pf + "down" + std::to_string(s) + ".b"), 2, 1);
            }
        }

        h = res_block(g, pf + "mid.res1", h, temb, cfg.channels_at(S - 1), cfg.channels_at(S - 1));
        {
            int si = site_index_of(Stage::middle, 0);
            if (si >= 0) {
                h = self_block(g, pf + "mid.self", h, si, t, mode, cache_in, out.cache_out ? &*out.cache_out : nullptr,
                               opts, &out.trace, slot_of(si));
            }
        }
        h = res_block(g, pf + "mid.res2", h, temb, cfg.channels_at(S - 1), cfg.channels_at(S - 1));

        for (int s = S - 1; s >= 0; s--) {
            std::string ds = pf + "dec" + std::to_string(s);
            Var<T> skip    = skips[(size_t)s];
            if (opts.control_residuals && (*opts.control_residuals)[(size_t)s].has_value()) {
                skip = add(skip, *(*opts.control_residuals)[(size_t)s]);
            }
            h = concat_channels<T>({h, skip});
            h = res_block(g, ds + ".res", h, temb, 2 * cfg.channels_at(s), cfg.channels_at(s));
            h = cross_block(g, ds + ".cross", h, tokens, cfg.group_index(Stage::decoder, s));
            int si = site_index_of(Stage::decoder, s);
            if (si >= 0) {
                h = self_block(g, ds + ".self", h, si, t, mode, cache_in, out.cache_out ? &*out.cache_out : nullptr,
                               opts, &out.trace, slot_of(si));
            }
            if (s > 0) {
                h = upsample_nearest2x(h);
                h = conv2d(h, pvar(g, pf + "up" + std::to_string(s) + ".w"), pvar(g, pf + "up" + std::to_string(s) + ".b"), 1, 1);
            }
        }

        h       = groupnorm(h, pvar(g, pf + "out.norm.g"), pvar(g, pf + "out.norm.b"), cfg.gn_groups);
        h       = silu(h);
        out.eps = conv2d(h, pvar(g, pf + "out.conv.w"), pvar(g, pf + "out.conv.b"), 1, 1);
        return out;
    }

    // ---- semantic encoder ---------------------------------------------------

    SemanticTokensVar<T> encode_semantic_vars(Graph<T>& g, const ArrayND<T>& subject, const ArrayND<T>& scene_background) const {
        const int S = cfg.num_scales;
        auto run_pyramid = [&](const ArrayND<T>& img) {
            std::vector<Var<T>> levels;
            auto a3 = img.rank() == 4 ? img.reshaped({img.dim(1), img.dim(2), img.dim(3)}) : img;
            auto h  = g.constant(a3);
            for (int s = 0; s < S; s++) {
                h = conv2d(h, pvar(g, "sem.conv" + std::to_string(s) + ".w"), pvar(g, "sem.conv" + std::to_string(s) + ".b"), 2, 1);
                h = silu(h);
                levels.push_back(h);
            }
            return levels;
        };
        auto sub_levels = run_pyramid(subject);
        auto bg_levels  = run_pyramid(scene_background);

        int tg = (int)std::lround(std::sqrt((double)cfg.token_count));
        SemanticTokensVar<T> out;
        out.groups.resize((size_t)cfg.num_token_groups());
        out.background.resize((size_t)cfg.num_token_groups());

        auto bg_deep = bg_levels[(size_t)(S - 1)];
        auto bg_vec  = transpose2d(reshape(avgpool(bg_deep, bg_deep.dim(1), bg_deep.dim(2)), {bg_deep.dim(0), 1}));

        for (int s = 0; s < S; s++) {
            auto lvl = sub_levels[(size_t)s];
            if (lvl.dim(1) % tg != 0 || lvl.dim(2) % tg != 0) {
                throw std::invalid_argument("encode_semantic: level size not divisible by token grid");
            }
            auto pooled = avgpool(lvl, lvl.dim(1) / tg, lvl.dim(2) / tg);
            auto toks   = transpose2d(reshape(pooled, {pooled.dim(0), (int64_t)(tg * tg)}));
            for (Stage stage : {Stage::encoder, Stage::decoder}) {
                std::string key = (stage == Stage::encoder ? "enc" : "dec") + std::to_string(s);
                int gi          = cfg.group_index(stage, s);
                out.groups[(size_t)gi] =
                    linear(toks, pvar(g, "sem.proj_" + key + ".w"), pvar(g, "sem.proj_" + key + ".b"));
                out.background[(size_t)gi] =
                    linear(bg_vec, pvar(g, "sem.bg_" + key + ".w"), pvar(g, "sem.bg_" + key + ".b"));
            }
        }
        return out;
    }

    SemanticTokens<T> encode_semantic(const ArrayND<T>& subject, const ArrayND<T>& scene_background) const {
        Graph<T> g;
        g.grad_enabled = false;
        auto vars      = encode_semantic_vars(g, subject, scene_background);
        SemanticTokens<T> out;
        for (auto& v : vars.groups) {
            out.groups.push_back(v.val());
        }
        for (auto& v : vars.background) {
            out.background.push_back(v.val());
        }
        return out;
    }
};

// Standalone mutual spatial attention, the Eq. 4 surface: Q from the
// generation tokens, K/V from [gen, cached]; with cached absent this is plain
// self-attention. params = {Wq, Wk, Wv} row-major (d,d).
template <class T>
struct MutualAttentionParams {
    ArrayND<T> wq, wk, wv;
};

template <class T>
ArrayND<T> mutual_attention(const ArrayND<T>& gen_hidden, const ArrayND<T>* cached,
                            const MutualAttentionParams<T>& p, AttnMasses* masses = nullptr) {
    if (cached && cached->dim(1) != gen_hidden.dim(1)) {
        throw std::invalid_argument("mutual_attention: token width mismatch");
    }
    Graph<T> g;
    g.grad_enabled = false;
    auto seq = g.constant(gen_hidden);
    auto kvs = cached ? concat_rows(seq, g.constant(*cached)) : seq;
    auto q   = matmul(seq, g.constant(p.wq));
    auto k   = matmul(kvs, g.constant(p.wk));
    auto v   = matmul(kvs, g.constant(p.wv));
    auto o   = attention_core(q, k, v, gen_hidden.dim(0), masses);
    return o.val();
}

}  // namespace sigil

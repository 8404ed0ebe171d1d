#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "sigil/recycling.hpp"

using namespace sigil;

namespace {

DenoiserConfig tiny_config() {
    DenoiserConfig cfg;
    cfg.image_size      = 8;
    cfg.latent_channels = 1;
    cfg.base_channels   = 2;
    cfg.num_scales      = 2;
    cfg.self_attn_sites = DenoiserConfig::default_sites(2);
    cfg.token_count     = 4;
    cfg.gn_groups       = 2;
    cfg.time_dim        = 8;
    return cfg;
}

struct Setup {
    Denoiser<double> model;
    ArrayND<double> z_t, scene, mask, subject, sub_noise;
    DiffusionSchedule sched;
};

Setup make_setup(uint64_t seed, bool perturb = true) {
    Setup s{Denoiser<double>::init(tiny_config(), 99),
            randn<double>({1, 1, 8, 8}, seed),
            randn<double>({1, 1, 8, 8}, seed + 1),
            ArrayND<double>({1, 1, 8, 8}),
            randn<double>({1, 1, 8, 8}, seed + 2),
            randn<double>({1, 1, 8, 8}, seed + 3),
            make_schedule(50, 1e-4, 0.02, 10)};
    Rng mr(seed + 4);
    for (int64_t i = 0; i < 64; i++) {
        s.mask[i] = mr.bernoulli(0.6) ? 1.0 : 0.0;
    }
    if (perturb) {
        Rng noise(seed + 5);
        for (auto& name : s.model.params.names) {
            auto& p = s.model.params.at(name);
            for (int64_t i = 0; i < p.numel(); i++) {
                p[i] += 0.08 * noise.normal();
            }
        }
    }
    return s;
}

SignatureCache<double> fake_cache(Graph<double>& g, int t, int sites, int64_t tokens, int64_t dim) {
    SignatureCache<double> c;
    c.t = t;
    for (int i = 0; i < sites; i++) {
        c.entries.push_back(g.constant(randn<double>({tokens, dim}, 1000 + (uint64_t)i)));
    }
    return c;
}

}  // namespace

TEST_CASE("sparse_transform bounds are bitwise and keep rate matches the threshold") {
    Graph<double> g;
    auto cache = fake_cache(g, 3, 5, 4, 2);

    auto none = sparse_transform(cache, SparsePolicy(0.0, 123));
    CHECK(none.present_count() == 0);
    CHECK(none.t == 3);

    auto full = sparse_transform(cache, SparsePolicy(1.0, 123));
    CHECK(full.present_count() == 5);
    for (size_t i = 0; i < 5; i++) {
        CHECK(full.entries[i]->node == cache.entries[i]->node);  // unchanged, same nodes
    }

    // Monte-Carlo oracle over 1e4 site draws at the 0.6 threshold
    int kept      = 0;
    int total     = 0;
    for (uint64_t seed = 0; seed < 2000; seed++) {
        auto out = sparse_transform(cache, SparsePolicy(0.6, seed));
        kept += out.present_count();
        total += 5;
    }
    double rate = (double)kept / (double)total;
    CHECK(rate == doctest::Approx(0.6).epsilon(0.034));  // 0.6 +- 0.02

    CHECK_THROWS_AS(SparsePolicy(-0.1, 1), std::invalid_argument);
    CHECK_THROWS_AS(SparsePolicy(1.1, 1), std::invalid_argument);

    // seeded draws are reproducible
    auto a = sparse_transform(cache, SparsePolicy(0.5, 77));
    auto b = sparse_transform(cache, SparsePolicy(0.5, 77));
    for (size_t i = 0; i < 5; i++) {
        CHECK(a.entries[i].has_value() == b.entries[i].has_value());
    }
}

TEST_CASE("cfg_combine degenerate cases and affinity") {
    auto u = randn<double>({1, 1, 3, 3}, 1);
    auto c = randn<double>({1, 1, 3, 3}, 2);

    CHECK(bitwise_equal(cfg_combine(u, c, 1.0), c));
    CHECK(bitwise_equal(cfg_combine(u, c, 0.0), u));

    auto zero = ArrayND<double>::zeros({1});
    auto two  = ArrayND<double>::full({1}, 2.0);
    CHECK(cfg_combine(zero, two, 1.5)[0] == doctest::Approx(3.0).epsilon(1e-15));

    // affine in w: w=2 equals u + 2 (c - u) to 1e-12
    auto ex = cfg_combine(u, c, 2.0);
    for (int64_t i = 0; i < u.numel(); i++) {
        CHECK(std::abs(ex[i] - (u[i] + 2.0 * (c[i] - u[i]))) < 1e-12);
    }

    auto bad = randn<double>({1, 1, 2, 2}, 3);
    CHECK_THROWS_AS(cfg_combine(u, bad, 1.0), std::invalid_argument);
}

TEST_CASE("gemini_step with zero threshold equals the blocked single pass bitwise") {
    auto s = make_setup(500);
    GeminiFlags sym;
    sym.system = SystemKind::symbiotic;
    GeminiFlags blk;
    blk.system = SystemKind::blocked;

    Graph<double> g1;
    auto tok1 = s.model.encode_semantic_vars(g1, s.subject, s.scene);
    auto a    = gemini_step(g1, s.model, s.z_t, s.scene, s.mask, s.subject, s.sub_noise, 7, &tok1,
                            SparsePolicy(0.0, 42), sym, s.sched);
    Graph<double> g2;
    auto tok2 = s.model.encode_semantic_vars(g2, s.subject, s.scene);
    auto b    = gemini_step(g2, s.model, s.z_t, s.scene, s.mask, s.subject, s.sub_noise, 7, &tok2,
                            SparsePolicy(0.0, 42), blk, s.sched);
    CHECK(bitwise_equal(a.eps.val(), b.eps.val()));
    CHECK(a.delivered_count == 0);

    // zeroing all subject pixels changes nothing when delivery is blocked
    auto zero_sub = ArrayND<double>::zeros({1, 1, 8, 8});
    Graph<double> g3;
    auto tok3 = s.model.encode_semantic_vars(g3, s.subject, s.scene);
    auto c    = gemini_step(g3, s.model, s.z_t, s.scene, s.mask, zero_sub, s.sub_noise, 7, &tok3,
                            SparsePolicy(0.0, 42), sym, s.sched);
    CHECK(bitwise_equal(c.eps.val(), b.eps.val()));
}

TEST_CASE("gemini_step: seeded determinism and full delivery") {
    auto s = make_setup(600);
    GeminiFlags sym;
    sym.system = SystemKind::symbiotic;

    ArrayND<double> first;
    for (int rep = 0; rep < 2; rep++) {
        Graph<double> g;
        auto tok = s.model.encode_semantic_vars(g, s.subject, s.scene);
        auto out = gemini_step(g, s.model, s.z_t, s.scene, s.mask, s.subject, s.sub_noise, 9, &tok,
                               SparsePolicy(0.6, 4242), sym, s.sched);
        if (rep == 0) {
            first = out.eps.val();
        } else {
            CHECK(bitwise_equal(first, out.eps.val()));
        }
    }

    Graph<double> g;
    auto tok = s.model.encode_semantic_vars(g, s.subject, s.scene);
    auto out = gemini_step(g, s.model, s.z_t, s.scene, s.mask, s.subject, s.sub_noise, 9, &tok,
                           SparsePolicy(1.0, 1), sym, s.sched);
    CHECK(out.delivered_count == 3);
    CHECK(out.trace.records.size() == 3);  // one record per delivery site
    for (auto& r : out.trace.records) {
        CHECK(r.delivered);
    }
}

TEST_CASE("delivered-site count over many trials approaches lambda * num_sites") {
    auto s = make_setup(700, /*perturb=*/false);
    GeminiFlags sym;
    sym.system  = SystemKind::symbiotic;
    double lam  = 0.6;
    int total   = 0;
    int trials  = 400;
    for (int i = 0; i < trials; i++) {
        Graph<double> g;
        auto out = gemini_step(g, s.model, s.z_t, s.scene, s.mask, s.subject, s.sub_noise, 3, nullptr,
                               SparsePolicy(lam, (uint64_t)i * 31 + 7), sym, s.sched);
        total += out.delivered_count;
    }
    double mean = (double)total / (double)trials;
    CHECK(mean == doctest::Approx(lam * 3.0).epsilon(0.05));
}

TEST_CASE("control assistant: zero-init residuals are a strict no-op, count matches scales") {
    auto s = make_setup(800, /*perturb=*/false);  // keep adapters at exact zero
    s.model.add_control_assistant(3);

    GeminiFlags ctl;
    ctl.system = SystemKind::controlnet;
    GeminiFlags blk;
    blk.system = SystemKind::blocked;

    Graph<double> g1;
    auto tok1 = s.model.encode_semantic_vars(g1, s.subject, s.scene);
    auto a    = gemini_step(g1, s.model, s.z_t, s.scene, s.mask, s.subject, s.sub_noise, 5, &tok1,
                            SparsePolicy(1.0, 2), ctl, s.sched);
    Graph<double> g2;
    auto tok2 = s.model.encode_semantic_vars(g2, s.subject, s.scene);
    auto b    = gemini_step(g2, s.model, s.z_t, s.scene, s.mask, s.subject, s.sub_noise, 5, &tok2,
                            SparsePolicy(1.0, 2), blk, s.sched);
    CHECK(bitwise_equal(a.eps.val(), b.eps.val()));

    // residual count = num decoder scales, deterministic for a fixed input
    Graph<double> g3;
    auto composed = compose_input(s.z_t, s.subject, ArrayND<double>::full({1, 1, 8, 8}, 1.0));
    auto r1       = control_forward(s.model, g3, composed, 5, nullptr);
    CHECK(r1.size() == 2);
    for (auto& r : r1) {
        REQUIRE(r.has_value());
        for (int64_t i = 0; i < r->val().numel(); i++) {
            CHECK(r->val()[i] == 0.0);
        }
    }
    auto zero_in = compose_input(ArrayND<double>::zeros({1, 1, 8, 8}), ArrayND<double>::zeros({1, 1, 8, 8}),
                                 ArrayND<double>::full({1, 1, 8, 8}, 1.0));
    Graph<double> g4, g5;
    auto r2 = control_forward(s.model, g4, zero_in, 5, nullptr);
    auto r3 = control_forward(s.model, g5, zero_in, 5, nullptr);
    for (size_t i = 0; i < r2.size(); i++) {
        CHECK(bitwise_equal(r2[i]->val(), r3[i]->val()));
    }
}

TEST_CASE("reference assistant with copied parameters reproduces the recycling cache bitwise") {
    auto s = make_setup(900);
    s.model.add_reference_assistant(5);
    // add_reference_assistant copies base -> assistant, so caches must agree
    auto sites = delivery_site_indices(s.model.cfg, DeliveryPosition::decoder);

    auto ones     = ArrayND<double>::full({1, 1, 8, 8}, 1.0);
    auto sub_t    = forward_diffuse(s.subject, 5, s.sub_noise, s.sched);
    auto composed = compose_input(sub_t, s.subject, ones);

    Graph<double> g;
    auto tok = s.model.encode_semantic_vars(g, s.subject, s.scene);
    ForwardOpts<double> opts;
    opts.delivery_sites = sites;
    auto base_cache = s.model.forward(g, composed, 5, &tok, nullptr, Mode::extract, opts);
    auto ref_cache  = reference_forward(s.model, g, composed, 5, &tok, sites);

    CHECK(ref_cache.entries.size() == base_cache.cache_out->entries.size());
    for (size_t i = 0; i < sites.size(); i++) {
        CHECK(bitwise_equal(ref_cache.entries[i]->val(), (*base_cache.cache_out->entries[i]).val()));
    }

    // diverge the assistant: caches must now differ
    auto& w = s.model.params.at("assistant.conv_in.w");
    w[0] += 0.5;
    Graph<double> g2;
    auto tok2      = s.model.encode_semantic_vars(g2, s.subject, s.scene);
    auto ref_cache2 = reference_forward(s.model, g2, composed, 5, &tok2, sites);
    bool any_diff = false;
    for (size_t i = 0; i < sites.size(); i++) {
        any_diff = any_diff || !bitwise_equal(ref_cache2.entries[i]->val(), (*base_cache.cache_out->entries[i]).val());
    }
    CHECK(any_diff);
}

TEST_CASE("position policy selects encoder, decoder or both delivery sites") {
    DenoiserConfig cfg = tiny_config();
    cfg.self_attn_sites.push_back(AttnSite{Stage::encoder, 1});
    cfg.canonicalize_sites();
    auto dec  = delivery_site_indices(cfg, DeliveryPosition::decoder);
    auto enc  = delivery_site_indices(cfg, DeliveryPosition::encoder);
    auto both = delivery_site_indices(cfg, DeliveryPosition::both);
    CHECK(dec.size() == 3);   // mid, dec1, dec0
    CHECK(enc.size() == 1);   // enc1
    CHECK(both.size() == 4);
}

TEST_CASE("gemini gradcheck: gradients flow through sparse-kept caches and assistants") {
    auto cfg = tiny_config();

    for (auto system : {SystemKind::symbiotic, SystemKind::controlnet, SystemKind::referencenet}) {
        auto model = Denoiser<double>::init(cfg, 321);
        if (system == SystemKind::controlnet) {
            model.add_control_assistant(7);
        }
        if (system == SystemKind::referencenet) {
            model.add_reference_assistant(7);
        }
        Rng noise(11);
        for (auto& name : model.params.names) {
            auto& p = model.params.at(name);
            for (int64_t i = 0; i < p.numel(); i++) {
                p[i] += 0.06 * noise.normal();
            }
        }
        auto z_t       = randn<double>({1, 1, 8, 8}, 51);
        auto scene     = randn<double>({1, 1, 8, 8}, 52);
        auto subject   = randn<double>({1, 1, 8, 8}, 53);
        auto sub_noise = randn<double>({1, 1, 8, 8}, 54);
        auto target    = randn<double>({1, 1, 8, 8}, 55);
        ArrayND<double> mask({1, 1, 8, 8});
        Rng mr(56);
        for (int64_t i = 0; i < 64; i++) {
            mask[i] = mr.bernoulli(0.5) ? 1.0 : 0.0;
        }
        auto sched = make_schedule(50, 1e-4, 0.02, 10);

        // seed chosen so the 0.6 policy keeps a strict subset of sites
        SparsePolicy policy(0.6, 1234);
        {
            Graph<double> probe;
            auto cache = SignatureCache<double>{};
            cache.t    = 1;
            cache.entries.resize(3, probe.constant(ArrayND<double>::zeros({1, 1})));
            auto kept = sparse_transform(cache, policy);
            REQUIRE(kept.present_count() > 0);
            REQUIRE(kept.present_count() < 3);
        }

        auto loss_fn = [&](ParamStore<double>& ps, Graph<double>* gout) {
            Denoiser<double> m;
            m.cfg    = model.cfg;
            m.params = ps;
            Graph<double> local;
            Graph<double>& g = gout ? *gout : local;
            GeminiFlags flags;
            flags.system = system;
            auto tok = m.encode_semantic_vars(g, subject, scene);
            auto out = gemini_step(g, m, z_t, scene, mask, subject, sub_noise, 11, &tok, policy, flags, sched);
            auto d   = sub(out.eps, g.constant(target.reshaped(out.eps.shape())));
            auto l   = mean_all(mul(d, d));
            if (gout) {
                g.backward(l);
            }
            return l.val()[0];
        };
        double rel = sigil::testutil::gradcheck_rel_err(model.params, loss_fn, 1e-5);
        INFO("system " << system_name(system) << " rel err " << rel);
        CHECK(rel < 1e-3);
    }
}

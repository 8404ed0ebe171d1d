#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "sigil/denoiser.hpp"
#include "sigil/diffusion.hpp"
#include "sigil/recycling.hpp"

using namespace sigil;

namespace {

// tiny two-scale config used across the denoiser tests
DenoiserConfig tiny_config() {
    DenoiserConfig cfg;
    cfg.image_size      = 8;
    cfg.latent_channels = 1;
    cfg.base_channels   = 2;
    cfg.num_scales      = 2;
    cfg.self_attn_sites = DenoiserConfig::default_sites(2);  // mid, dec1, dec0
    cfg.token_count     = 4;
    cfg.gn_groups       = 2;
    cfg.time_dim        = 8;
    return cfg;
}

template <class T>
ComposedInput<T> tiny_input(uint64_t seed, int size = 8, int ch = 1) {
    auto z     = randn<T>({1, ch, size, size}, seed);
    auto scene = randn<T>({1, ch, size, size}, seed + 1);
    ArrayND<T> mask({1, 1, size, size});
    Rng rng(seed + 2);
    for (int64_t i = 0; i < mask.numel(); i++) {
        mask[i] = rng.bernoulli(0.5) ? T(1) : T(0);
    }
    return compose_input(z, scene, mask);
}

}  // namespace

TEST_CASE("compose_input identity, zero and checkerboard masks") {
    auto z     = randn<double>({1, 2, 4, 4}, 1);
    auto scene = randn<double>({1, 2, 4, 4}, 2);

    auto ones = ArrayND<double>::full({1, 1, 4, 4}, 1.0);
    auto ci   = compose_input(z, scene, ones);
    CHECK(bitwise_equal(ci.masked_scene, scene.reshaped({2, 4, 4})));

    auto zeros = ArrayND<double>::zeros({1, 1, 4, 4});
    auto cz    = compose_input(z, scene, zeros);
    for (int64_t i = 0; i < cz.masked_scene.numel(); i++) {
        CHECK(cz.masked_scene[i] == 0.0);
    }

    ArrayND<double> checker({1, 1, 4, 4});
    for (int64_t y = 0; y < 4; y++) {
        for (int64_t x = 0; x < 4; x++) {
            checker[y * 4 + x] = (x + y) % 2;
        }
    }
    auto cc = compose_input(z, scene, checker);
    for (int64_t c = 0; c < 2; c++) {
        for (int64_t i = 0; i < 16; i++) {
            if (checker[i] == 1.0) {
                CHECK(cc.masked_scene[c * 16 + i] == scene[c * 16 + i]);
            } else {
                CHECK(cc.masked_scene[c * 16 + i] == 0.0);
            }
        }
    }

    auto bad = randn<double>({1, 2, 3, 3}, 3);
    CHECK_THROWS_AS(compose_input(z, bad, ones), std::invalid_argument);
    ArrayND<double> nonbinary = ArrayND<double>::full({1, 1, 4, 4}, 0.5);
    CHECK_THROWS_AS(compose_input(z, scene, nonbinary), std::invalid_argument);
}

TEST_CASE("config invariants are enforced") {
    auto cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());

    auto missing = cfg;
    missing.self_attn_sites = {AttnSite{Stage::middle, 0}, AttnSite{Stage::decoder, 1}};
    CHECK_THROWS_AS(missing.validate(), std::invalid_argument);  // dec0 has no site

    auto bad_scales = cfg;
    bad_scales.num_scales = 1;
    CHECK_THROWS_AS(bad_scales.validate(), std::invalid_argument);
}

TEST_CASE("encode_semantic determinism, group count, background separation") {
    auto model = Denoiser<double>::init(tiny_config(), 11);
    auto sub   = randn<double>({1, 1, 8, 8}, 21);
    auto bg    = randn<double>({1, 1, 8, 8}, 22);

    auto t1 = model.encode_semantic(sub, bg);
    auto t2 = model.encode_semantic(sub, bg);
    CHECK(t1.groups.size() == 4);  // 2 * num_scales
    CHECK(t1.background.size() == 4);
    for (size_t i = 0; i < t1.groups.size(); i++) {
        CHECK(bitwise_equal(t1.groups[i], t2.groups[i]));
        CHECK(t1.groups[i].dim(0) == 4);  // token_count
    }

    auto bg2 = randn<double>({1, 1, 8, 8}, 23);
    auto t3  = model.encode_semantic(sub, bg2);
    for (size_t i = 0; i < t1.groups.size(); i++) {
        CHECK(bitwise_equal(t1.groups[i], t3.groups[i]));  // groups only from subject
        CHECK(!bitwise_equal(t1.background[i], t3.background[i]));
    }
}

TEST_CASE("mutual_attention: blocked reduction, hand softmax, row sums") {
    // cached absent reduces to plain self-attention
    auto gen = randn<double>({5, 3}, 31);
    MutualAttentionParams<double> p;
    p.wq = randn<double>({3, 3}, 32);
    p.wk = randn<double>({3, 3}, 33);
    p.wv = randn<double>({3, 3}, 34);

    auto a = mutual_attention<double>(gen, nullptr, p);
    Graph<double> g;
    auto seq = g.constant(gen);
    auto ref = attention_core(matmul(seq, g.constant(p.wq)), matmul(seq, g.constant(p.wk)),
                              matmul(seq, g.constant(p.wv)), 5);
    CHECK(bitwise_equal(a, ref.val()));

    // N_gen = N_sub = 1, identity projections, equal tokens: weights (0.5, 0.5)
    MutualAttentionParams<double> ident;
    ident.wq = ArrayND<double>::from({2, 2}, {1, 0, 0, 1});
    ident.wk = ident.wq;
    ident.wv = ident.wq;
    auto tok = ArrayND<double>::from({1, 2}, {0.3, -0.7});
    AttnMasses masses;
    auto out = mutual_attention<double>(tok, &tok, ident, &masses);
    CHECK(out[0] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(-0.7).epsilon(1e-12));
    CHECK(masses.subject_mass[0] == doctest::Approx(0.5).epsilon(1e-12));

    // row-stochasticity:  gen + subject mass = 1
    auto cached = randn<double>({4, 3}, 35);
    AttnMasses m2;
    (void)mutual_attention<double>(gen, &cached, p, &m2);
    for (double sm : m2.subject_mass) {
        CHECK(sm >= 0.0);
        CHECK(sm <= 1.0);
    }

    auto wrong = randn<double>({4, 2}, 36);
    CHECK_THROWS_AS(mutual_attention<double>(gen, &wrong, p), std::invalid_argument);
}

TEST_CASE("denoise_forward: cache layout, empty-cache reduction, determinism") {
    auto model = Denoiser<double>::init(tiny_config(), 42);
    auto x     = tiny_input<double>(100);
    ForwardOpts<double> opts;
    opts.delivery_sites = delivery_site_indices(model.cfg, DeliveryPosition::decoder);
    CHECK(opts.delivery_sites.size() == 3);  // mid, dec1, dec0 for the 2-scale toy

    Graph<double> g;
    auto tokens = model.encode_semantic_vars(g, randn<double>({1, 1, 8, 8}, 101), randn<double>({1, 1, 8, 8}, 102));

    auto ext = model.forward(g, x, 17, &tokens, nullptr, Mode::extract, opts);
    REQUIRE(ext.cache_out.has_value());
    CHECK(ext.cache_out->entries.size() == 3);
    CHECK(ext.cache_out->present_count() == 3);
    CHECK(ext.cache_out->t == 17);

    // zero-init output projections: generate-with-cache == blocked, bitwise
    auto gen = model.forward(g, x, 17, &tokens, &*ext.cache_out, Mode::generate, opts);
    auto blk = model.forward(g, x, 17, &tokens, nullptr, Mode::blocked, opts);
    CHECK(bitwise_equal(gen.eps.val(), blk.eps.val()));

    // empty cache == blocked, bitwise, regardless of parameter values
    Rng noise(7);
    for (auto& name : model.params.names) {
        auto& p = model.params.at(name);
        for (int64_t i = 0; i < p.numel(); i++) {
            p[i] += 0.05 * noise.normal();
        }
    }
    Graph<double> g2;
    auto tokens2 = model.encode_semantic_vars(g2, randn<double>({1, 1, 8, 8}, 101), randn<double>({1, 1, 8, 8}, 102));
    SignatureCache<double> empty;
    empty.t = 23;
    empty.entries.resize(3);
    auto gen2 = model.forward(g2, x, 23, &tokens2, &empty, Mode::generate, opts);
    auto blk2 = model.forward(g2, x, 23, &tokens2, nullptr, Mode::blocked, opts);
    CHECK(bitwise_equal(gen2.eps.val(), blk2.eps.val()));

    // repeated calls agree bitwise
    Graph<double> g3;
    auto tokens3 = model.encode_semantic_vars(g3, randn<double>({1, 1, 8, 8}, 101), randn<double>({1, 1, 8, 8}, 102));
    auto blk3    = model.forward(g3, x, 23, &tokens3, nullptr, Mode::blocked, opts);
    CHECK(bitwise_equal(blk3.eps.val(), blk2.eps.val()));
}

TEST_CASE("cache timestep tag mismatch is a contract violation") {
    auto model = Denoiser<double>::init(tiny_config(), 42);
    auto x     = tiny_input<double>(200);
    ForwardOpts<double> opts;
    opts.delivery_sites = delivery_site_indices(model.cfg, DeliveryPosition::decoder);
    Graph<double> g;
    auto ext = model.forward(g, x, 10, nullptr, nullptr, Mode::extract, opts);
    CHECK_THROWS_AS(model.forward(g, x, 11, nullptr, &*ext.cache_out, Mode::generate, opts),
                    std::invalid_argument);
    // cache/site mismatch
    SignatureCache<double> short_cache;
    short_cache.t = 10;
    short_cache.entries.resize(1);
    CHECK_THROWS_AS(model.forward(g, x, 10, nullptr, &short_cache, Mode::generate, opts),
                    std::invalid_argument);
}

TEST_CASE("attention row-stochasticity holds at every site in generate mode") {
    auto model = Denoiser<double>::init(tiny_config(), 55);
    // break the zero-init so attention actually mixes
    Rng noise(8);
    for (auto& name : model.params.names) {
        auto& p = model.params.at(name);
        for (int64_t i = 0; i < p.numel(); i++) {
            p[i] += 0.1 * noise.normal();
        }
    }
    auto x = tiny_input<double>(300);
    ForwardOpts<double> opts;
    opts.delivery_sites = delivery_site_indices(model.cfg, DeliveryPosition::decoder);
    ArrayND<double> mask({1, 1, 8, 8});
    Rng mr(301);
    for (int64_t i = 0; i < 64; i++) {
        mask[i] = mr.bernoulli(0.7) ? 1.0 : 0.0;
    }
    opts.region_mask = &mask;

    Graph<double> g;
    auto ext = model.forward(g, x, 40, nullptr, nullptr, Mode::extract, opts);
    auto gen = model.forward(g, x, 40, nullptr, &*ext.cache_out, Mode::generate, opts);
    CHECK(gen.trace.records.size() == 3);
    for (auto& r : gen.trace.records) {
        CHECK(r.delivered);
        CHECK(r.subject_mass + r.gen_mass == doctest::Approx(1.0).epsilon(1e-5));
        CHECK(r.subject_mass > 0.0);
        CHECK(r.n_region_queries + r.n_background_queries == r.n_queries);
    }
}

TEST_CASE("denoiser gradients match finite differences in blocked and generate modes") {
    auto cfg  = tiny_config();
    auto base = Denoiser<double>::init(cfg, 77);
    // perturb so attention out-projections are not exactly zero
    Rng noise(9);
    for (auto& name : base.params.names) {
        auto& p = base.params.at(name);
        for (int64_t i = 0; i < p.numel(); i++) {
            p[i] += 0.08 * noise.normal();
        }
    }
    auto x          = tiny_input<double>(400);
    auto eps_target = randn<double>({1, 1, 8, 8}, 401);
    auto sub_img    = randn<double>({1, 1, 8, 8}, 402);
    auto bg_img     = randn<double>({1, 1, 8, 8}, 403);

    for (bool generate : {false, true}) {
        auto loss_fn = [&](ParamStore<double>& ps, Graph<double>* gout) {
            Denoiser<double> m;
            m.cfg    = base.cfg;
            m.params = ps;
            Graph<double> local;
            Graph<double>& g = gout ? *gout : local;
            ForwardOpts<double> opts;
            opts.delivery_sites = delivery_site_indices(m.cfg, DeliveryPosition::decoder);
            auto tokens = m.encode_semantic_vars(g, sub_img, bg_img);
            Var<double> eps;
            if (generate) {
                // gradients must flow through cached signatures into shared weights
                auto ext = m.forward(g, x, 5, &tokens, nullptr, Mode::extract, opts);
                auto out = m.forward(g, x, 5, &tokens, &*ext.cache_out, Mode::generate, opts);
                eps      = out.eps;
            } else {
                auto out = m.forward(g, x, 5, &tokens, nullptr, Mode::blocked, opts);
                eps      = out.eps;
            }
            auto d = sub(eps, g.constant(eps_target.reshaped(eps.shape())));
            auto l = mean_all(mul(d, d));
            if (gout) {
                g.backward(l);
            }
            return l.val()[0];
        };
        double rel = sigil::testutil::gradcheck_rel_err(base.params, loss_fn, 1e-5);
        INFO("mode " << (generate ? "generate" : "blocked") << " rel err " << rel);
        CHECK(rel < 1e-3);
    }
}

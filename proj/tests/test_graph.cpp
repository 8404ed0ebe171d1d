#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "sigil/graph.hpp"
#include "sigil/params.hpp"
#include "sigil/rng.hpp"

using namespace sigil;
using sigil::testutil::gradcheck_rel_err;

namespace {

// weighted sum against a fixed random array turns any output into a scalar
Var<double> project(Graph<double>& g, Var<double> x, uint64_t seed) {
    auto w = g.constant(randn<double>(x.shape(), seed));
    return mean_all(mul(x, w));
}

}  // namespace

TEST_CASE("elementwise and matmul gradients match finite differences") {
    ParamStore<double> ps;
    ps.add("a", randn<double>({4, 5}, 1));
    ps.add("b", randn<double>({4, 5}, 2));
    ps.add("w", randn<double>({5, 3}, 3));

    auto loss = [](ParamStore<double>& p, Graph<double>* gout) {
        Graph<double> local;
        Graph<double>& g = gout ? *gout : local;
        auto a = g.param("a", p.at("a"));
        auto b = g.param("b", p.at("b"));
        auto w = g.param("w", p.at("w"));
        auto h = mul(add(a, b), sub(a, scale(b, 0.5)));
        auto y = matmul(silu(h), w);
        auto l = project(g, y, 42);
        if (gout) {
            g.backward(l);
        }
        return l.val()[0];
    };
    CHECK(gradcheck_rel_err(ps, loss) < 1e-6);
}

TEST_CASE("conv2d gradient matches finite differences") {
    for (int stride : {1, 2}) {
        ParamStore<double> ps;
        ps.add("x", randn<double>({3, 6, 6}, 10 + stride));
        ps.add("w", randn<double>({4, 3, 3, 3}, 20 + stride));
        ps.add("b", randn<double>({4}, 30 + stride));
        auto loss = [stride](ParamStore<double>& p, Graph<double>* gout) {
            Graph<double> local;
            Graph<double>& g = gout ? *gout : local;
            auto y = conv2d(g.param("x", p.at("x")), g.param("w", p.at("w")), g.param("b", p.at("b")), stride, 1);
            auto l = project(g, y, 99);
            if (gout) {
                g.backward(l);
            }
            return l.val()[0];
        };
        CHECK(gradcheck_rel_err(ps, loss) < 1e-6);
    }
}

TEST_CASE("groupnorm gradient matches finite differences") {
    ParamStore<double> ps;
    ps.add("x", randn<double>({6, 4, 4}, 5));
    ps.add("gamma", randn<double>({6}, 6));
    ps.add("beta", randn<double>({6}, 7));
    auto loss = [](ParamStore<double>& p, Graph<double>* gout) {
        Graph<double> local;
        Graph<double>& g = gout ? *gout : local;
        auto y = groupnorm(g.param("x", p.at("x")), g.param("gamma", p.at("gamma")), g.param("beta", p.at("beta")), 3);
        auto l = project(g, y, 123);
        if (gout) {
            g.backward(l);
        }
        return l.val()[0];
    };
    CHECK(gradcheck_rel_err(ps, loss) < 1e-5);
}

TEST_CASE("upsample, avgpool, concat, bias, reshape gradients") {
    ParamStore<double> ps;
    ps.add("x", randn<double>({2, 4, 4}, 11));
    ps.add("y", randn<double>({3, 4, 4}, 12));
    ps.add("bias", randn<double>({16}, 13));
    auto loss = [](ParamStore<double>& p, Graph<double>* gout) {
        Graph<double> local;
        Graph<double>& g = gout ? *gout : local;
        auto x  = g.param("x", p.at("x"));
        auto y  = g.param("y", p.at("y"));
        auto up = upsample_nearest2x(x);              // (2,8,8)
        auto dn = avgpool(up, 2, 2);                  // (2,4,4)
        auto cc = concat_channels<double>({dn, y});   // (5,4,4)
        auto rs = reshape(cc, {5, 16});
        auto wb = add_row_bias(rs, g.param("bias", p.at("bias")));
        auto tr = transpose2d(wb);
        auto l  = project(g, tr, 321);
        if (gout) {
            g.backward(l);
        }
        return l.val()[0];
    };
    CHECK(gradcheck_rel_err(ps, loss) < 1e-6);
}

TEST_CASE("softmax_rows gradient and row sums") {
    ParamStore<double> ps;
    ps.add("x", randn<double>({5, 7}, 21));
    auto loss = [](ParamStore<double>& p, Graph<double>* gout) {
        Graph<double> local;
        Graph<double>& g = gout ? *gout : local;
        auto y = softmax_rows(g.param("x", p.at("x")));
        auto l = project(g, y, 222);
        if (gout) {
            g.backward(l);
        }
        return l.val()[0];
    };
    CHECK(gradcheck_rel_err(ps, loss) < 1e-6);

    Graph<double> g;
    auto y = softmax_rows(g.constant(randn<double>({8, 9}, 77)));
    for (int64_t i = 0; i < 8; i++) {
        double s = 0;
        for (int64_t j = 0; j < 9; j++) {
            s += y.val()[i * 9 + j];
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("attention_core matches the composed softmax route") {
    // dual route: streaming attention against explicit softmax(QK^T/sqrt(d))V
    Rng rng(505);
    for (int rep = 0; rep < 4; rep++) {
        int64_t nq = 3 + (int64_t)rng.below(140);
        int64_t nk = 1 + (int64_t)rng.below(200);
        int64_t d  = 1 + (int64_t)rng.below(24);
        auto qa = randn<double>({nq, d}, rng.next_u64());
        auto ka = randn<double>({nk, d}, rng.next_u64());
        auto va = randn<double>({nk, d}, rng.next_u64());

        Graph<double> g;
        auto q = g.constant(qa), k = g.constant(ka), v = g.constant(va);
        AttnMasses masses;
        auto fast = attention_core(q, k, v, std::min<int64_t>(nk, 2), &masses);

        auto scores = scale(matmul(q, transpose2d(k)), 1.0 / std::sqrt((double)d));
        auto ref    = matmul(softmax_rows(scores), v);
        CHECK(max_abs_diff(fast.val(), ref.val()) < 1e-12);

        // masses equal explicit column sums of the softmax
        for (int64_t i = 0; i < nq; i++) {
            double sub = 0;
            auto sm    = softmax_rows(scores);
            for (int64_t j = std::min<int64_t>(nk, 2); j < nk; j++) {
                sub += sm.val()[i * nk + j];
            }
            CHECK(masses.subject_mass[(size_t)i] == doctest::Approx(sub).epsilon(1e-10));
        }
    }
}

TEST_CASE("attention_core gradient matches finite differences") {
    ParamStore<double> ps;
    ps.add("q", randn<double>({6, 4}, 61));
    ps.add("k", randn<double>({9, 4}, 62));
    ps.add("v", randn<double>({9, 4}, 63));
    auto loss = [](ParamStore<double>& p, Graph<double>* gout) {
        Graph<double> local;
        Graph<double>& g = gout ? *gout : local;
        auto y = attention_core(g.param("q", p.at("q")), g.param("k", p.at("k")), g.param("v", p.at("v")), 6);
        auto l = project(g, y, 444);
        if (gout) {
            g.backward(l);
        }
        return l.val()[0];
    };
    CHECK(gradcheck_rel_err(ps, loss) < 1e-5);
}

TEST_CASE("shared parameter node accumulates gradients from both uses") {
    // d/dw mean((x w) .* (y w)) must include both paths
    ParamStore<double> ps;
    ps.add("w", randn<double>({3, 3}, 71));
    auto xa = randn<double>({2, 3}, 72);
    auto ya = randn<double>({2, 3}, 73);
    auto loss = [&](ParamStore<double>& p, Graph<double>* gout) {
        Graph<double> local;
        Graph<double>& g = gout ? *gout : local;
        auto w  = g.param("w", p.at("w"));
        auto w2 = g.param("w", p.at("w"));  // same node
        CHECK(w.node == w2.node);
        auto l = mean_all(mul(matmul(g.constant(xa), w), matmul(g.constant(ya), w2)));
        if (gout) {
            g.backward(l);
        }
        return l.val()[0];
    };
    CHECK(gradcheck_rel_err(ps, loss) < 1e-6);
}

TEST_CASE("ops are bitwise deterministic across repeated evaluation") {
    auto qa = randn<double>({70, 8}, 81);
    auto ka = randn<double>({130, 8}, 82);
    auto va = randn<double>({130, 8}, 83);
    ArrayND<double> first;
    for (int rep = 0; rep < 2; rep++) {
        Graph<double> g;
        auto out = attention_core(g.constant(qa), g.constant(ka), g.constant(va), 70);
        if (rep == 0) {
            first = out.val();
        } else {
            CHECK(bitwise_equal(first, out.val()));
        }
    }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sigil/diffusion.hpp"
#include "sigil/rng.hpp"
#include "sigil/schedule.hpp"

using namespace sigil;

TEST_CASE("make_schedule basic values") {
    auto s = make_schedule(1000, 1e-4, 0.02, 20);
    CHECK(s.alpha_bars[0] == doctest::Approx(0.9999).epsilon(1e-12));
    CHECK(s.inference_grid.size() == 20);
    // evenly strided subsequence of {0..T-1}
    for (size_t k = 1; k < s.inference_grid.size(); k++) {
        CHECK(s.inference_grid[k] - s.inference_grid[k - 1] == 50);
    }
    CHECK(s.inference_grid.front() == 0);
    CHECK(s.inference_grid.back() == 950);

    auto one = make_schedule(1, 0.5, 0.5, 1);
    CHECK(one.alpha_bars.size() == 1);
    CHECK(one.alpha_bars[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("schedule invariants: monotone, product identity, beta range") {
    auto s      = make_schedule(1000, 1e-4, 0.02, 50);
    double prod = 1.0;
    for (int t = 0; t < s.num_train_steps; t++) {
        CHECK(s.betas[t] > 0.0);
        CHECK(s.betas[t] < 1.0);
        prod *= 1.0 - s.betas[t];
        CHECK(std::abs(s.alpha_bars[t] - prod) <= 1e-12 * std::abs(prod));
        if (t > 0) {
            CHECK(s.alpha_bars[t] < s.alpha_bars[t - 1]);
        }
    }
}

TEST_CASE("make_schedule rejects bad ranges") {
    CHECK_THROWS_AS(make_schedule(1000, 0.0, 0.02, 20), std::invalid_argument);
    CHECK_THROWS_AS(make_schedule(1000, 1e-4, 1.0, 20), std::invalid_argument);
    CHECK_THROWS_AS(make_schedule(1000, 0.02, 1e-4, 20), std::invalid_argument);
    CHECK_THROWS_AS(make_schedule(1000, 1e-4, 0.02, 0), std::invalid_argument);
    CHECK_THROWS_AS(make_schedule(1000, 1e-4, 0.02, 1001), std::invalid_argument);
    CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.02, 1), std::invalid_argument);
}

TEST_CASE("forward_diffuse zero-noise limit and deterministic branch") {
    auto s  = make_schedule(10, 1e-15, 1e-15, 10);
    auto z0 = randn<double>({1, 2, 4, 4}, 42);
    auto e  = randn<double>({1, 2, 4, 4}, 43);
    auto zt = forward_diffuse(z0, 0, e, s);
    CHECK(max_abs_diff(zt, z0) < 1e-6);

    auto s2    = make_schedule(1000, 1e-4, 0.02, 20);
    auto zero  = ArrayND<double>::zeros({1, 2, 4, 4});
    auto zt2   = forward_diffuse(z0, 300, zero, s2);
    double sa  = std::sqrt(s2.alpha_bar(300));
    for (int64_t i = 0; i < z0.numel(); i++) {
        CHECK(zt2[i] == doctest::Approx(sa * z0[i]).epsilon(1e-12));
    }
}

TEST_CASE("forward_diffuse shape mismatch error") {
    auto s  = make_schedule(100, 1e-4, 0.02, 10);
    auto z0 = ArrayND<double>::zeros({1, 1, 4, 4});
    auto e  = ArrayND<double>::zeros({1, 1, 2, 2});
    CHECK_THROWS_AS(forward_diffuse(z0, 5, e, s), std::invalid_argument);
}

TEST_CASE("forward_diffuse Monte-Carlo variance oracle") {
    // independent oracle: per-pixel sample variance over 1e4 draws ~ 1 - abar
    auto s   = make_schedule(1000, 1e-4, 0.02, 20);
    int t    = 500;
    double z = 0.7;
    Rng rng(99);
    const int N = 10000;
    double mean = 0, m2 = 0;
    double sa = std::sqrt(s.alpha_bar(t));
    double sb = std::sqrt(1.0 - s.alpha_bar(t));
    for (int i = 0; i < N; i++) {
        double x = sa * z + sb * rng.normal();
        double d = x - mean;
        mean += d / (i + 1);
        m2 += d * (x - mean);
    }
    double var      = m2 / (N - 1);
    double expected = 1.0 - s.alpha_bar(t);
    CHECK(var == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("sampler_step recovers z0 with the true noise") {
    auto s = make_schedule(1000, 1e-4, 0.02, 20);
    auto z0 = randn<double>({1, 3, 4, 4}, 7);
    for (int t : {0, 13, 500, 950, 999}) {
        auto e  = randn<double>({1, 3, 4, 4}, 100 + t);
        auto zt = forward_diffuse(z0, t, e, s);
        auto rec = sampler_step(zt, t, -1, e, s);
        CHECK(max_abs_diff(rec, z0) < 1e-6);
    }
}

TEST_CASE("sampler_step identity at t_prev == t and fixed point at zero") {
    auto s   = make_schedule(1000, 1e-4, 0.02, 20);
    auto z   = randn<double>({1, 1, 3, 3}, 5);
    auto e   = randn<double>({1, 1, 3, 3}, 6);
    auto out = sampler_step(z, 400, 400, e, s);
    CHECK(max_abs_diff(out, z) < 1e-12);

    auto zero = ArrayND<double>::zeros({1, 1, 3, 3});
    auto out2 = sampler_step(zero, 700, 350, zero, s);
    for (int64_t i = 0; i < out2.numel(); i++) {
        CHECK(out2[i] == 0.0);
    }
}

TEST_CASE("sampler_step rejects non-monotone timesteps and is bitwise deterministic") {
    auto s = make_schedule(1000, 1e-4, 0.02, 20);
    auto z = randn<double>({1, 1, 3, 3}, 8);
    auto e = randn<double>({1, 1, 3, 3}, 9);
    CHECK_THROWS_AS(sampler_step(z, 100, 200, e, s), std::invalid_argument);
    CHECK_THROWS_AS(sampler_step(z, 100, -2, e, s), std::invalid_argument);
    auto a = sampler_step(z, 500, 250, e, s);
    auto b = sampler_step(z, 500, 250, e, s);
    CHECK(bitwise_equal(a, b));
}

TEST_CASE("property: forward then perfect-eps step is identity across t") {
    auto s = make_schedule(1000, 1e-4, 0.02, 20);
    Rng rng(1234);
    for (int rep = 0; rep < 20; rep++) {
        int t   = (int)rng.below(1000);
        auto z0 = randn<double>({1, 2, 3, 3}, rng.next_u64());
        auto e  = randn<double>({1, 2, 3, 3}, rng.next_u64());
        auto zt = forward_diffuse(z0, t, e, s);
        auto rec = sampler_step(zt, t, -1, e, s);
        CHECK(max_abs_diff(rec, z0) < 1e-6);
    }
}

TEST_CASE("sampler_invert with eps == 0 round-trips exactly") {
    auto s  = make_schedule(1000, 1e-4, 0.02, 50);
    auto z0 = randn<double>({1, 3, 5, 5}, 77);
    auto f  = [](const ArrayND<double>& z, int) { return ArrayND<double>::zeros(z.shape); };
    auto zT = sampler_invert<double>(z0, f, s, 50);
    // resample down the same grid
    int stride = s.num_train_steps / 50;
    ArrayND<double> z = zT;
    for (int k = 49; k >= 0; k--) {
        int t      = k * stride;
        int t_prev = k > 0 ? (k - 1) * stride : -1;
        z          = sampler_step(z, t, t_prev, ArrayND<double>::zeros(z.shape), s);
    }
    CHECK(max_abs_diff(z, z0) < 1e-6);
}

TEST_CASE("sampler_invert single step, constant denoiser, hand algebra") {
    auto s  = make_schedule(1, 0.02, 0.02, 1);
    auto z0 = randn<double>({1, 1, 2, 2}, 31);
    double c = 0.3;
    auto f  = [c](const ArrayND<double>& z, int) { return ArrayND<double>::full(z.shape, c); };
    auto zT = sampler_invert<double>(z0, f, s, 1);
    // hand algebra: z1 = sqrt(abar) z0 + sqrt(1-abar) c
    double abar = 1.0 - 0.02;
    for (int64_t i = 0; i < z0.numel(); i++) {
        double expect = std::sqrt(abar) * z0[i] + std::sqrt(1.0 - abar) * c;
        CHECK(zT[i] == doctest::Approx(expect).epsilon(1e-10));
    }
    auto back = sampler_step(zT, 0, -1, ArrayND<double>::full(z0.shape, c), s);
    CHECK(max_abs_diff(back, z0) < 1e-10);
}

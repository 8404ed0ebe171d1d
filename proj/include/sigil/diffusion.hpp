#pragma once

#include <cmath>
#include <functional>

#include "sigil/array.hpp"
#include "sigil/schedule.hpp"

namespace sigil {

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
template <class T>
ArrayND<T> forward_diffuse(const ArrayND<T>& z0, int t, const ArrayND<T>& eps, const DiffusionSchedule& sched) {
    check_same_shape(z0, eps, "forward_diffuse");
    double abar = sched.alpha_bar(t);
    T a         = (T)std::sqrt(abar);
    T b         = (T)std::sqrt(1.0 - abar);
    ArrayND<T> out(z0.shape);
    for (int64_t i = 0; i < z0.numel(); i++) {
        out[i] = a * z0[i] + b * eps[i];
    }
    return out;
}

// Deterministic (eta = 0) sampler update: predict z0hat from eps_pred, then
// re-noise to level t_prev. t_prev == -1 returns z0hat.
template <class T>
ArrayND<T> sampler_step(const ArrayND<T>& z_t, int t, int t_prev, const ArrayND<T>& eps_pred, const DiffusionSchedule& sched) {
    check_same_shape(z_t, eps_pred, "sampler_step");
    if (t_prev > t || t_prev < -1) {
        throw std::invalid_argument("sampler_step: non-monotone timesteps t=" + std::to_string(t) + " t_prev=" + std::to_string(t_prev));
    }
    double abar_t = sched.alpha_bar(t);
    double abar_p = sched.alpha_bar(t_prev);
    T inv_sa      = (T)(1.0 / std::sqrt(abar_t));
    T sb_t        = (T)std::sqrt(1.0 - abar_t);
    T sa_p        = (T)std::sqrt(abar_p);
    T sb_p        = (T)std::sqrt(1.0 - abar_p);
    ArrayND<T> out(z_t.shape);
    for (int64_t i = 0; i < z_t.numel(); i++) {
        T z0hat = (z_t[i] - sb_t * eps_pred[i]) * inv_sa;
        out[i]  = sa_p * z0hat + sb_p * eps_pred[i];
    }
    return out;
}

// Forward-Euler inversion: walk the grid upward evaluating eps at the current
// state. Returns z at the top grid level; running sampler_step back down the
// same grid approximately reproduces z0.
template <class T>
ArrayND<T> sampler_invert(const ArrayND<T>& z0,
                          const std::function<ArrayND<T>(const ArrayND<T>&, int)>& denoiser,
                          const DiffusionSchedule& sched,
                          int steps = 0) {
    if (steps <= 0) {
        steps = sched.inference_steps;
    }
    if (steps < 1 || steps > sched.num_train_steps) {
        throw std::invalid_argument("sampler_invert: bad step count");
    }
    int stride = sched.num_train_steps / steps;
    ArrayND<T> z = z0.clone();
    int t_from   = -1;
    for (int k = 0; k < steps; k++) {
        int t_to          = k * stride;
        ArrayND<T> eps    = denoiser(z, t_from < 0 ? t_to : t_from);
        check_same_shape(z, eps, "sampler_invert");
        double abar_f = sched.alpha_bar(t_from);
        double abar_t = sched.alpha_bar(t_to);
        T inv_sa      = (T)(1.0 / std::sqrt(abar_f));
        T sb_f        = (T)std::sqrt(1.0 - abar_f);
        T sa_t        = (T)std::sqrt(abar_t);
        T sb_t        = (T)std::sqrt(1.0 - abar_t);
        for (int64_t i = 0; i < z.numel(); i++) {
            T z0hat = (z[i] - sb_f * eps[i]) * inv_sa;
            z[i]    = sa_t * z0hat + sb_t * eps[i];
        }
        t_from = t_to;
    }
    return z;
}

}  // namespace sigil

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace sigil {

// Noise schedule table. alpha_bars are always computed in double so the
// cumulative-product identity holds to 1e-12 regardless of the model dtype.
struct DiffusionSchedule {
    int num_train_steps = 0;
    std::vector<double> betas;
    std::vector<double> alpha_bars;
    int inference_steps = 0;
    std::vector<int> inference_grid;  // ascending timesteps, evenly strided

    // alpha_bar(-1) == 1 denotes the clean level.
    double alpha_bar(int t) const {
        if (t == -1) {
            return 1.0;
        }
        if (t < 0 || t >= num_train_steps) {
            throw std::out_of_range("timestep out of range: " + std::to_string(t));
        }
        return alpha_bars[(size_t)t];
    }
};

inline DiffusionSchedule make_schedule(int T, double beta_start, double beta_end, int inference_steps) {
    if (T < 1) {
        throw std::invalid_argument("make_schedule: T must be >= 1");
    }
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
        throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");
    }
    if (inference_steps < 1 || inference_steps > T) {
        throw std::invalid_argument("make_schedule: need 1 <= inference_steps <= T");
    }
    DiffusionSchedule s;
    s.num_train_steps = T;
    s.inference_steps = inference_steps;
    s.betas.resize((size_t)T);
    s.alpha_bars.resize((size_t)T);
    double prod = 1.0;
    for (int t = 0; t < T; t++) {
        double beta = (T == 1) ? beta_start : beta_start + (beta_end - beta_start) * (double)t / (double)(T - 1);
        s.betas[(size_t)t] = beta;
        prod *= 1.0 - beta;
        s.alpha_bars[(size_t)t] = prod;
    }
    // evenly strided subsequence of {0..T-1}, starting at 0
    int stride = T / inference_steps;
    s.inference_grid.resize((size_t)inference_steps);
    for (int k = 0; k < inference_steps; k++) {
        s.inference_grid[(size_t)k] = k * stride;
    }
    return s;
}

}  // namespace sigil

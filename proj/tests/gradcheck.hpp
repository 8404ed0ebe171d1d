#pragma once

#include <cmath>
#include <functional>

#include "sigil/graph.hpp"
#include "sigil/params.hpp"

namespace sigil::testutil {

// Central finite differences of a scalar loss over every entry of a
// ParamStore, compared against the analytic gradient from one backward pass.
// Returns the l2-relative error between the two gradient vectors.
inline double gradcheck_rel_err(ParamStore<double>& ps,
                                const std::function<double(ParamStore<double>&, Graph<double>*)>& loss_fn,
                                double h = 1e-5) {
    Graph<double> g;
    double base = loss_fn(ps, &g);
    (void)base;
    std::vector<double> analytic;
    for (auto& name : ps.names) {
        auto it = g.param_nodes.find(name);
        const auto& arr = ps.at(name);
        if (it != g.param_nodes.end() && it->second->grad.defined()) {
            auto& grad = it->second->grad;
            analytic.insert(analytic.end(), grad.data(), grad.data() + grad.numel());
        } else {
            analytic.insert(analytic.end(), (size_t)arr.numel(), 0.0);
        }
    }

    std::vector<double> flat = ps.flatten();
    std::vector<double> fd(flat.size());
    for (size_t i = 0; i < flat.size(); i++) {
        double orig = flat[i];
        double step = h * std::max(1.0, std::abs(orig));
        flat[i]     = orig + step;
        ps.set_flat(flat);
        double lp = loss_fn(ps, nullptr);
        flat[i]   = orig - step;
        ps.set_flat(flat);
        double lm = loss_fn(ps, nullptr);
        flat[i]   = orig;
        fd[i]     = (lp - lm) / (2.0 * step);
    }
    ps.set_flat(flat);

    double num = 0, den = 0;
    for (size_t i = 0; i < flat.size(); i++) {
        double d = analytic[i] - fd[i];
        num += d * d;
        den += fd[i] * fd[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

}  // namespace sigil::testutil

#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "sigil/array.hpp"
#include "sigil/graph.hpp"
#include "sigil/rng.hpp"

namespace sigil {

// Named parameter arrays with stable insertion order.
template <class T>
struct ParamStore {
    std::vector<std::string> names;
    std::unordered_map<std::string, ArrayND<T>> values;

    void add(const std::string& name, ArrayND<T> a) {
        if (values.count(name)) {
            throw std::invalid_argument("duplicate parameter: " + name);
        }
        names.push_back(name);
        values.emplace(name, std::move(a));
    }

    bool has(const std::string& name) const { return values.count(name) > 0; }

    ArrayND<T>& at(const std::string& name) {
        auto it = values.find(name);
        if (it == values.end()) {
            throw std::out_of_range("no parameter: " + name);
        }
        return it->second;
    }
    const ArrayND<T>& at(const std::string& name) const {
        auto it = values.find(name);
        if (it == values.end()) {
            throw std::out_of_range("no parameter: " + name);
        }
        return it->second;
    }

    int64_t total_params() const {
        int64_t n = 0;
        for (auto& name : names) {
            n += values.at(name).numel();
        }
        return n;
    }

    std::vector<T> flatten() const {
        std::vector<T> flat;
        flat.reserve((size_t)total_params());
        for (auto& name : names) {
            const auto& a = values.at(name);
            flat.insert(flat.end(), a.data(), a.data() + a.numel());
        }
        return flat;
    }

    void set_flat(const std::vector<T>& flat) {
        size_t off = 0;
        for (auto& name : names) {
            auto& a = values.at(name);
            std::copy(flat.begin() + off, flat.begin() + off + (size_t)a.numel(), a.data());
            off += (size_t)a.numel();
        }
        if (off != flat.size()) {
            throw std::invalid_argument("set_flat: size mismatch");
        }
    }

    ParamStore clone() const {
        ParamStore out;
        for (auto& name : names) {
            out.add(name, values.at(name).clone());
        }
        return out;
    }

    // Copies values from another store with a name prefix stripped/added.
    void copy_values_from(const ParamStore& src, const std::string& src_prefix = "",
                          const std::string& dst_prefix = "") {
        for (auto& name : src.names) {
            if (name.rfind(src_prefix, 0) != 0) {
                continue;
            }
            std::string dst = dst_prefix + name.substr(src_prefix.size());
            if (has(dst)) {
                auto& d = at(dst);
                check_same_shape(d, src.values.at(name), "copy_values_from");
                std::copy(src.values.at(name).data(), src.values.at(name).data() + d.numel(), d.data());
            }
        }
    }

    template <class U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (auto& name : names) {
            out.add(name, values.at(name).template cast<U>());
        }
        return out;
    }
};

// Initializers used by the model builders.
template <class T>
ArrayND<T> init_conv_weight(std::vector<int64_t> shape, Rng& rng) {
    int64_t fan_in = shape[1] * shape[2] * shape[3];
    double std     = std::sqrt(2.0 / (double)fan_in);
    ArrayND<T> w(std::move(shape));
    fill_normal(w, rng, std);
    return w;
}

template <class T>
ArrayND<T> init_linear_weight(int64_t in, int64_t out, Rng& rng) {
    double std = std::sqrt(1.0 / (double)in);
    ArrayND<T> w({in, out});
    fill_normal(w, rng, std);
    return w;
}

// Collect per-graph parameter gradients into a flat map (zeros when a
// parameter never received gradient).
template <class T>
std::unordered_map<std::string, ArrayND<T>> collect_grads(const Graph<T>& g, const ParamStore<T>& store) {
    std::unordered_map<std::string, ArrayND<T>> grads;
    for (auto& [name, node] : g.param_nodes) {
        if (node->grad.defined()) {
            grads.emplace(name, node->grad);
        } else {
            grads.emplace(name, ArrayND<T>::zeros(store.at(name).shape));
        }
    }
    return grads;
}

}  // namespace sigil

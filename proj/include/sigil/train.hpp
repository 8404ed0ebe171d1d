#pragma once

#include <fstream>
#include <iostream>

#include "sigil/data_synth.hpp"
#include "sigil/recycling.hpp"
#include "sigil/threads.hpp"

namespace sigil {

template <class T>
struct AdamW {
    double lr           = 2e-4;
    double beta1        = 0.9;
    double beta2        = 0.999;
    double eps          = 1e-8;
    double weight_decay = 0.0;
    int64_t step_count  = 0;
    std::unordered_map<std::string, ArrayND<T>> m_, v_;

    void update(ParamStore<T>& params, const std::unordered_map<std::string, ArrayND<T>>& grads) {
        step_count++;
        double bc1 = 1.0 - std::pow(beta1, (double)step_count);
        double bc2 = 1.0 - std::pow(beta2, (double)step_count);
        for (auto& name : params.names) {
            auto& p  = params.at(name);
            auto git = grads.find(name);
            if (m_.find(name) == m_.end()) {
                m_.emplace(name, ArrayND<T>::zeros(p.shape));
                v_.emplace(name, ArrayND<T>::zeros(p.shape));
            }
            auto& m = m_.at(name);
            auto& v = v_.at(name);
            for (int64_t i = 0; i < p.numel(); i++) {
                double gi = git != grads.end() ? (double)git->second[i] : 0.0;
                m[i]      = (T)(beta1 * (double)m[i] + (1.0 - beta1) * gi);
                v[i]      = (T)(beta2 * (double)v[i] + (1.0 - beta2) * gi * gi);
                double mh = (double)m[i] / bc1;
                double vh = (double)v[i] / bc2;
                p[i]      = (T)((double)p[i] - lr * (mh / (std::sqrt(vh) + eps) + weight_decay * (double)p[i]));
            }
        }
    }
};

// One training element in latent space.
template <class T>
struct TrainSample {
    ArrayND<T> scene;    // (1,C,H,W), the clean target z0
    ArrayND<T> mask;     // (1,1,H,W)
    ArrayND<T> subject;  // (1,C,H,W)
};

template <class T>
struct Dataset {
    std::vector<SamplePair> pairs;  // images, pre-augmentation

    TrainSample<T> sample_at(size_t i, uint64_t augment_seed) const {
        const auto& p = pairs[i];
        TrainSample<T> s;
        s.scene   = encode_image<T>(p.scene).data;
        s.mask    = p.mask.data.template cast<T>().reshaped({1, 1, p.mask.height(), p.mask.width()});
        s.subject = encode_image<T>(augment_subject(p.subject, augment_seed)).data;
        return s;
    }

    std::vector<std::vector<int64_t>> category_indices() const {
        std::vector<std::vector<int64_t>> idx(3);
        for (size_t i = 0; i < pairs.size(); i++) {
            idx[(size_t)pairs[i].category].push_back((int64_t)i);
        }
        return idx;
    }
};

struct TrainConfig {
    int64_t steps   = 600;
    int64_t batch   = 8;
    double lr       = 2e-4;
    double lambda   = 0.6;
    double cfg_drop = 0.1;
    SystemKind system         = SystemKind::symbiotic;
    DeliveryPosition position = DeliveryPosition::decoder;
    uint64_t seed   = 7;
    int threads     = 0;
    int64_t log_every  = 25;
    int64_t ckpt_every = 200;
    std::string dump_path = "training_diagnostic.txt";
};

template <class T>
struct StepResult {
    double loss         = 0;
    int delivered_total = 0;
    AttentionTrace trace;  // first sample's trace, for lightweight logging
};

// Per-sample forward+backward graphs run in parallel; losses and gradients
// reduce in sample order, so results are independent of the thread count.
template <class T>
StepResult<T> train_step(Denoiser<T>& model, const DiffusionSchedule& sched, const Dataset<T>& data,
                         const std::vector<int64_t>& batch_indices, AdamW<T>& opt,
                         const TrainConfig& cfg, int64_t step) {
    const int64_t B = (int64_t)batch_indices.size();
    std::vector<double> losses((size_t)B);
    std::vector<int> delivered((size_t)B, 0);
    std::vector<std::unordered_map<std::string, ArrayND<T>>> grads((size_t)B);
    std::vector<AttentionTrace> traces((size_t)B);

    parallel_for(B, cfg.threads, [&](int64_t bi) {
        uint64_t s0 = derive_seed(cfg.seed, {(uint64_t)step, (uint64_t)bi});
        auto sample = data.sample_at((size_t)batch_indices[(size_t)bi], derive_seed(s0, {0x617567ULL}));

        Rng tr(derive_seed(s0, {0x74ULL}));
        int t = (int)tr.below(sched.num_train_steps);
        auto eps_gen = randn<T>(sample.scene.shape, derive_seed(s0, {0x65707347ULL}));
        auto eps_sub = randn<T>(sample.subject.shape, derive_seed(s0, {0x65707353ULL}));
        Rng dr(derive_seed(s0, {0x64726f70ULL}));
        bool drop = dr.uniform() < cfg.cfg_drop;

        ArrayND<T> scene = sample.scene;
        ArrayND<T> mask  = sample.mask;
        if (cfg.system == SystemKind::scorer) {
            // unconditional scene diffusion: nothing preserved, nothing injected
            mask = ArrayND<T>::zeros(sample.mask.shape);
        }

        Graph<T> g;
        auto z_t = forward_diffuse(scene, t, eps_gen, sched);

        SemanticTokensVar<T> tokens;
        bool uncond = drop || cfg.system == SystemKind::scorer;
        if (!uncond) {
            auto composed_for_bg = compose_input(scene, scene, mask);
            tokens = model.encode_semantic_vars(g, sample.subject, composed_for_bg.masked_scene.reshaped({1, scene.dim(1), scene.dim(2), scene.dim(3)}));
        }

        SparsePolicy policy(cfg.lambda, derive_seed(s0, {0x7370ULL}));
        GeminiFlags flags;
        flags.training      = true;
        flags.unconditional = uncond;
        flags.system        = cfg.system;
        flags.position      = cfg.position;

        auto out = gemini_step(g, model, z_t, scene, mask, sample.subject, eps_sub, t,
                               uncond ? nullptr : &tokens, policy, flags, sched);
        auto diff = sub(g.constant(eps_gen.reshaped(out.eps.shape())), out.eps);
        auto loss = mean_all(mul(diff, diff));
        g.backward(loss);

        losses[(size_t)bi]    = (double)loss.val()[0];
        delivered[(size_t)bi] = out.delivered_count;
        grads[(size_t)bi]     = collect_grads(g, model.params);
        if (bi == 0) {
            traces[0] = std::move(out.trace);
        }
    });

    StepResult<T> res;
    std::unordered_map<std::string, ArrayND<T>> total;
    for (int64_t bi = 0; bi < B; bi++) {
        res.loss += losses[(size_t)bi] / (double)B;
        res.delivered_total += delivered[(size_t)bi];
        for (auto& [name, grad] : grads[(size_t)bi]) {
            auto it = total.find(name);
            if (it == total.end()) {
                total.emplace(name, grad.clone());
            } else {
                for (int64_t i = 0; i < grad.numel(); i++) {
                    it->second[i] += grad[i];
                }
            }
        }
    }
    for (auto& [name, grad] : total) {
        for (int64_t i = 0; i < grad.numel(); i++) {
            grad[i] = (T)((double)grad[i] / (double)B);
        }
    }
    res.trace = std::move(traces[0]);

    if (!std::isfinite(res.loss)) {
        std::ofstream dump(cfg.dump_path);
        dump << "non-finite loss at step " << step << "\n";
        dump << "loss " << res.loss << "\n";
        for (auto& name : model.params.names) {
            const auto& p = model.params.at(name);
            double nrm    = 0;
            for (int64_t i = 0; i < p.numel(); i++) {
                nrm += (double)p[i] * (double)p[i];
            }
            dump << name << " l2 " << std::sqrt(nrm) << "\n";
        }
        throw std::runtime_error("train_step: non-finite loss at step " + std::to_string(step) +
                                 " (diagnostics in " + cfg.dump_path + ")");
    }
    opt.update(model.params, total);
    return res;
}

}  // namespace sigil

// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <map>
#include <string>
#include <vector>

#include "openmixer/autodiff.hpp"

namespace openmixer {

// Named parameter registry. std::map keeps iteration order stable across
// runs, which the optimizer and the checkpoint format both rely on.
class ParamStore {
public:
    Var create(const std::string& name, Tensor init) {
        if (params_.count(name)) throw ValidationError("ParamStore: duplicate name " + name);
        Var p = parameter(std::move(init));
        params_.emplace(name, p);
        return p;
    }

    Var get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ValidationError("ParamStore: unknown name " + name);
        return it->second;
    }

    bool has(const std::string& name) const { return params_.count(name) != 0; }

    void zero_grad() {
        for (auto& [name, p] : params_) {
            p->ensure_grad();
            p->grad.fill(0.0);
        }
    }

    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& [name, p] : params_) n += p->value.numel();
        return n;
    }

    const std::map<std::string, Var>& all() const { return params_; }
    std::map<std::string, Var>& all() { return params_; }

private:
    std::map<std::string, Var> params_;
};

// Xavier-uniform fill; `gain` shrinks the range for near-identity inits.
inline Tensor xavier_uniform(int out_dim, int in_dim, Rng& rng, double gain = 1.0) {
    Tensor w({out_dim, in_dim});
    const double bound = gain * std::sqrt(6.0 / (in_dim + out_dim));
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
    return w;
}

// Fully connected layer; weight is [out, in] so the forward is matmul_nt.
struct Linear {
    Var weight;
    Var bias;  // null when the layer is bias-free

    Var operator()(const Var& x) const {
        Var y = matmul_nt(x, weight);
        if (bias) y = add_rowvec(y, bias);
        return y;
    }
};

inline Linear make_linear(ParamStore& ps, const std::string& name, int in_dim, int out_dim,
                          Rng& rng, bool with_bias = true, double gain = 1.0) {
    Linear l;
    l.weight = ps.create(name + ".weight", xavier_uniform(out_dim, in_dim, rng, gain));
    if (with_bias) l.bias = ps.create(name + ".bias", Tensor({out_dim}));
    return l;
}

inline Linear make_linear_zero(ParamStore& ps, const std::string& name, int in_dim, int out_dim,
                               bool with_bias = true) {
    Linear l;
    l.weight = ps.create(name + ".weight", Tensor({out_dim, in_dim}));
    if (with_bias) l.bias = ps.create(name + ".bias", Tensor({out_dim}));
    return l;
}

struct LayerNorm {
    Var gamma;
    Var beta;
    double eps = 1e-5;

    Var operator()(const Var& x) const { return layer_norm_last(x, gamma, beta, eps); }
};

inline LayerNorm make_layer_norm(ParamStore& ps, const std::string& name, int dim) {
    LayerNorm ln;
    ln.gamma = ps.create(name + ".gamma", Tensor({dim}, 1.0));
    ln.beta = ps.create(name + ".beta", Tensor({dim}));
    return ln;
}

// Two-layer MLP with ReLU, the shape used by the prediction heads.
struct Mlp {
    Linear fc1, fc2;

    Var operator()(const Var& x) const { return fc2(relu(fc1(x))); }
};

inline Mlp make_mlp(ParamStore& ps, const std::string& name, int in_dim, int hidden, int out_dim,
                    Rng& rng, bool zero_out = false) {
    Mlp m;
    m.fc1 = make_linear(ps, name + ".fc1", in_dim, hidden, rng);
    m.fc2 = zero_out ? make_linear_zero(ps, name + ".fc2", hidden, out_dim)
                     : make_linear(ps, name + ".fc2", hidden, out_dim, rng);
    return m;
}

// AdamW with decoupled weight decay and optional global-norm gradient clipping.
class AdamW {
public:
    struct Config {
        double lr = 1e-5;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 1e-4;
        double clip_norm = 1.0;  // <= 0 disables clipping
        // Parameters whose name starts with any prefix are never updated, not
        // even by weight decay (frozen recognition path in zsr_tl training).
        std::vector<std::string> freeze_prefixes;
    };

    explicit AdamW(Config cfg) : cfg_(cfg) {}

    bool frozen(const std::string& name) const {
        for (const auto& prefix : cfg_.freeze_prefixes)
            if (name.rfind(prefix, 0) == 0) return true;
        return false;
    }

    void step(ParamStore& ps) {
        ++t_;
        double grad_scale = 1.0;
        if (cfg_.clip_norm > 0.0) {
            double sq = 0.0;
            for (const auto& [name, p] : ps.all()) {
                if (p->grad.numel() != p->value.numel() || frozen(name)) continue;
                for (std::size_t i = 0; i < p->grad.numel(); ++i) sq += p->grad[i] * p->grad[i];
            }
            const double norm = std::sqrt(sq);
            if (norm > cfg_.clip_norm) grad_scale = cfg_.clip_norm / norm;
        }
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (auto& [name, p] : ps.all()) {
            if (p->grad.numel() != p->value.numel() || frozen(name)) continue;
            auto& st = state_[name];
            if (!st.m.same_shape(p->value)) {
                st.m = Tensor(p->value.shape());
                st.v = Tensor(p->value.shape());
            }
            for (std::size_t i = 0; i < p->value.numel(); ++i) {
                const double g = p->grad[i] * grad_scale;
                st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g;
                st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = st.m[i] / bc1;
                const double vhat = st.v[i] / bc2;
                p->value[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                          cfg_.weight_decay * p->value[i]);
            }
        }
    }

    struct State {
        Tensor m, v;
    };

    std::uint64_t step_count() const { return t_; }
    void set_step_count(std::uint64_t t) { t_ = t; }
    std::map<std::string, State>& state() { return state_; }
    const std::map<std::string, State>& state() const { return state_; }
    const Config& config() const { return cfg_; }

private:
    Config cfg_;
    std::uint64_t t_ = 0;
    std::map<std::string, State> state_;
};

}  // namespace openmixer

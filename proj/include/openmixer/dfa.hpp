// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "openmixer/autodiff.hpp"
#include "openmixer/common.hpp"
#include "openmixer/nn.hpp"
#include "openmixer/tensor.hpp"

namespace openmixer::dfa {

struct VocabEntry {
    std::string name;
    std::vector<std::string> prompts;
    bool is_novel = false;
};

struct Vocabulary {
    std::vector<VocabEntry> classes;
    Tensor text_features;  // [C, D], unit-norm rows

    int size() const { return static_cast<int>(classes.size()); }

    int find(const std::string& name) const {
        for (std::size_t i = 0; i < classes.size(); ++i)
            if (classes[i].name == name) return static_cast<int>(i);
        return -1;
    }

    std::vector<bool> novel_flags() const {
        std::vector<bool> flags;
        for (const auto& c : classes) flags.push_back(c.is_novel);
        return flags;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& c : classes) out.push_back(c.name);
        return out;
    }

    void validate() const {
        if (classes.empty()) throw ValidationError("vocabulary: no classes");
        std::set<std::string> seen;
        for (const auto& c : classes) {
            if (!seen.insert(c.name).second)
                throw ValidationError("vocabulary: duplicate class '" + c.name + "'");
            if (c.prompts.empty())
                throw ValidationError("vocabulary: class '" + c.name + "' has no prompts");
        }
        if (text_features.ndim() != 2 || text_features.dim(0) != size())
            throw ValidationError("vocabulary: text feature shape mismatch");
        const int d = text_features.dim(1);
        for (int c = 0; c < size(); ++c) {
            double norm = 0.0;
            for (int j = 0; j < d; ++j) norm += text_features.at(c, j) * text_features.at(c, j);
            if (std::abs(std::sqrt(norm) - 1.0) > 1e-5)
                throw ValidationError("vocabulary: text feature row not unit-norm");
        }
    }
};

// Per class, arithmetic mean over that class's prompt features, re-normalized.
inline Tensor ensemble_text_features(const std::vector<Tensor>& per_class) {
    if (per_class.empty()) throw InputError("ensemble_text_features: no classes");
    const int d = per_class[0].dim(1);
    Tensor out({static_cast<int>(per_class.size()), d});
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        const Tensor& rows = per_class[c];
        if (rows.ndim() != 2 || rows.dim(1) != d || rows.dim(0) < 1)
            throw InputError("ensemble_text_features: bad prompt feature shape");
        std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
        for (int k = 0; k < rows.dim(0); ++k)
            for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += rows.at(k, j);
        double norm = 0.0;
        for (int j = 0; j < d; ++j) {
            mean[static_cast<std::size_t>(j)] /= rows.dim(0);
            norm += mean[static_cast<std::size_t>(j)] * mean[static_cast<std::size_t>(j)];
        }
        norm = std::sqrt(norm);
        if (norm < 1e-8)
            throw InputError("ensemble_text_features: prompt features cancel to zero");
        for (int j = 0; j < d; ++j) out.at(static_cast<int>(c), j) = mean[static_cast<std::size_t>(j)] / norm;
    }
    return out;
}

// Expands "a video of person {CLS}" into one prompt per class.
inline std::map<std::string, std::vector<std::string>> apply_prompt_template(
    const std::string& tmpl, const std::vector<std::string>& classes) {
    if (tmpl.find("{CLS}") == std::string::npos)
        throw InputError("prompt template must contain {CLS}");
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& cls : classes) {
        std::string s = tmpl;
        std::size_t pos;
        while ((pos = s.find("{CLS}")) != std::string::npos) s.replace(pos, 5, cls);
        out[cls] = {s};
    }
    return out;
}

enum class FusionMode { dynamic, fixed };

// Per-query fusion weights; lambda is stored pre-sigmoid so the effective
// value stays inside (0,1) in dynamic mode. Fixed mode pins every query to
// the same constant, which makes the lambda=1 recognition path exact.
struct FusionParams {
    Var lambda_raw;  // [N]
    FusionMode mode = FusionMode::dynamic;
    double fixed_lambda = 1.0;

    Var effective_lambda() const {
        if (mode == FusionMode::fixed) {
            if (fixed_lambda < 0.0 || fixed_lambda > 1.0)
                throw ConfigError("fixed fusion weight must lie in [0,1]");
            return constant(Tensor(lambda_raw->value.shape(), fixed_lambda));
        }
        return sigmoid(lambda_raw);
    }
};

inline FusionParams make_fusion(ParamStore& ps, const std::string& name, int n,
                                FusionMode mode = FusionMode::dynamic,
                                double fixed_lambda = 1.0) {
    FusionParams fp;
    fp.lambda_raw = ps.create(name + ".lambda_raw", Tensor({n}, 0.0));  // sigmoid(0) = 1/2
    fp.mode = mode;
    fp.fixed_lambda = fixed_lambda;
    return fp;
}

// F_tilde = lambda * repeat(f_v) + (1 - lambda) * proj(Q_t), rows re-normalized
// so the downstream cosine alignment is well-defined.
inline Var dynamic_fuse(const Var& q_t, const Tensor& f_v, const FusionParams& fusion,
                        const Linear& proj) {
    if (q_t->value.ndim() != 2) throw InputError("dynamic_fuse: queries must be [N, D_q]");
    const int n = q_t->value.dim(0);
    const int d = f_v.dim(0);
    Var projected = proj(q_t);  // [N, D]
    if (projected->value.dim(1) != d)
        throw InputError("dynamic_fuse: projection width does not match f_v");
    Tensor repeated({n, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) repeated.at(i, j) = f_v.at(j);
    Var lam = fusion.effective_lambda();
    if (lam->value.dim(0) != n) throw InputError("dynamic_fuse: lambda count mismatch");
    Var one_minus = sub(constant(Tensor({n}, 1.0)), lam);
    Var fused = add(scale_rows(constant(repeated), lam), scale_rows(projected, one_minus));
    return normalize_rows(fused);
}

struct AlignResult {
    Var logits;  // [N, C] = F_tilde F_t^T / tau
    Var probs;   // row-softmax of logits
};

inline AlignResult align_scores(const Var& f_tilde, const Tensor& text_features, double tau) {
    if (tau <= 0.0) throw ConfigError("align_scores: temperature must be positive");
    if (f_tilde->value.dim(1) != text_features.dim(1))
        throw InputError("align_scores: feature width mismatch");
    AlignResult out;
    out.logits = scale(matmul_nt(f_tilde, constant(text_features)), 1.0 / tau);
    out.probs = softmax_last(out.logits);
    return out;
}

// The recognition path: a function of (Q_t, f_v, F_t) only; spatial queries
// and boxes are deliberately not inputs.
inline Var classify(const Var& q_t, const Tensor& f_v, const Vocabulary& vocabulary,
                    const FusionParams& fusion, const Linear& proj, double tau) {
    Var fused = dynamic_fuse(q_t, f_v, fusion, proj);
    return align_scores(fused, vocabulary.text_features, tau).logits;
}

inline std::vector<int> predicted_classes(const Tensor& logits) {
    std::vector<int> out;
    for (int i = 0; i < logits.dim(0); ++i) {
        int best = 0;
        for (int c = 1; c < logits.dim(1); ++c)
            if (logits.at(i, c) > logits.at(i, best)) best = c;
        out.push_back(best);
    }
    return out;
}

}  // namespace openmixer::dfa

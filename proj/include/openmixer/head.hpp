// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//
// The cascaded mixing blocks. Each stage runs a spatial block (query
// self-attention with a box-geometry bias, then adaptive mixing over the
// feature pyramid, then score and box-offset heads) followed by a temporal
// block whose queries can be conditioned on the video or pre-matched text
// feature. Boxes are refined stage by stage and detached between stages;
// gradients reach earlier stages through the queries only.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "openmixer/backend.hpp"
#include "openmixer/criterion.hpp"
#include "openmixer/dfa.hpp"
#include "openmixer/nn.hpp"
#include "openmixer/prior.hpp"
#include "openmixer/types.hpp"

namespace openmixer::head {

enum class ConditionMode { pre_video, post_video, pre_text, none };

inline const char* condition_mode_name(ConditionMode m) {
    switch (m) {
        case ConditionMode::pre_video: return "pre_video";
        case ConditionMode::post_video: return "post_video";
        case ConditionMode::pre_text: return "pre_text";
        case ConditionMode::none: return "none";
    }
    throw ConfigError("condition_mode_name: unknown mode");
}

inline ConditionMode parse_condition_mode(const std::string& s) {
    if (s == "pre_video") return ConditionMode::pre_video;
    if (s == "post_video") return ConditionMode::post_video;
    if (s == "pre_text") return ConditionMode::pre_text;
    if (s == "none") return ConditionMode::none;
    throw ConfigError("parse_condition_mode: unknown mode '" + s + "'");
}

struct HeadConfig {
    int num_queries = 100;
    int num_stages = 3;
    int query_dim = 256;
    int heads = 8;
    int qv_points = 32;
    ConditionMode condition_mode = ConditionMode::pre_video;

    void validate() const {
        if (num_queries < 1) throw ConfigError("head: num_queries must be >= 1");
        if (num_stages < 1) throw ConfigError("head: num_stages must be >= 1");
        if (heads < 1) throw ConfigError("head: heads must be >= 1");
        if (query_dim < 1 || query_dim % heads != 0)
            throw ConfigError("head: query_dim must be a positive multiple of heads");
        if (qv_points < 1) throw ConfigError("head: qv_points must be >= 1");
    }
};

// ---- Q-Q mixing ----

// Multi-head self-attention over the N queries. Attention logits carry an
// additive geometry bias: the pairwise GIoU of the current boxes through a
// per-head scalar affine map. The output projection starts at zero, so a
// freshly built mixer is the layer-normalized identity.
struct QQMixer {
    Linear wq, wk, wv, wo;
    Var bias_scale;  // [H]
    Var bias_shift;  // [H]
    LayerNorm ln;
    int heads = 1;
};

inline QQMixer make_qq_mixer(ParamStore& ps, const std::string& name, int dim, int heads,
                             Rng& rng) {
    QQMixer m;
    m.heads = heads;
    m.wq = make_linear(ps, name + ".wq", dim, dim, rng);
    m.wk = make_linear(ps, name + ".wk", dim, dim, rng);
    m.wv = make_linear(ps, name + ".wv", dim, dim, rng);
    m.wo = make_linear_zero(ps, name + ".wo", dim, dim);
    m.bias_scale = ps.create(name + ".bias_scale", Tensor({heads}, 1.0));
    m.bias_shift = ps.create(name + ".bias_shift", Tensor({heads}));
    m.ln = make_layer_norm(ps, name + ".ln", dim);
    return m;
}

inline Var qq_mix(const QQMixer& m, const Var& q, const BoxSet& boxes) {
    if (q->value.ndim() != 2) throw InputError("qq_mix: queries must be [N, D_q]");
    const int n = q->value.dim(0), dq = q->value.dim(1);
    if (boxes.size() != n) throw InputError("qq_mix: box count does not match queries");
    if (dq % m.heads != 0) throw ConfigError("qq_mix: query width not divisible by heads");
    const int dh = dq / m.heads;

    Tensor giou({n * n, 1});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            giou.at(i * n + j, 0) =
                1.0 - criterion::giou_distance(boxes.boxes[static_cast<std::size_t>(i)],
                                               boxes.boxes[static_cast<std::size_t>(j)]);
    Var bias = add_rowvec(matmul_nt(constant(giou), reshape(m.bias_scale, {m.heads, 1})),
                          m.bias_shift);  // [N*N, H]
    bias = reshape(permute102(reshape(bias, {n * n, m.heads, 1})), {m.heads, n, n});

    auto split = [&](const Var& x) { return permute102(reshape(x, {n, m.heads, dh})); };
    Var att = attention_core(split(m.wq(q)), split(m.wk(q)), split(m.wv(q)), bias);
    Var merged = reshape(permute102(att), {n, dq});
    return m.ln(add(q, m.wo(merged)));
}

// ---- Q-V mixing ----

// Adaptive mixing: every query generates its own sampling points over the
// pyramid (offsets are box-relative), soft level weights, and channel- and
// point-mixing matrices. Generator weights start at zero with identity-mixing
// biases, and the output projection starts at zero, so a fresh mixer is the
// layer-normalized identity while still passing gradient to its generators.
struct QVMixer {
    Linear offset_gen;   // D_q -> 3P, points as (dx, dy, dt) triples
    Linear level_gen;    // D_q -> P*L
    Linear channel_gen;  // D_q -> Dp*Dp
    Linear point_gen;    // D_q -> P*P
    Linear out_proj;     // P*Dp -> D_q
    LayerNorm ln;
    int points = 0;
    int levels = 0;
    int dp = 0;
};

inline QVMixer make_qv_mixer(ParamStore& ps, const std::string& name, int dim, int points,
                             int levels, int dp, Rng& rng) {
    QVMixer m;
    m.points = points;
    m.levels = levels;
    m.dp = dp;
    m.offset_gen = make_linear_zero(ps, name + ".offset", dim, 3 * points);
    for (int p = 0; p < points; ++p) {
        m.offset_gen.bias->value.at(3 * p) = rng.uniform(-0.3, 0.3);
        m.offset_gen.bias->value.at(3 * p + 1) = rng.uniform(-0.3, 0.3);
        m.offset_gen.bias->value.at(3 * p + 2) = rng.uniform(-0.5, 0.5);
    }
    m.level_gen = make_linear_zero(ps, name + ".level", dim, points * levels);
    m.channel_gen = make_linear_zero(ps, name + ".channel", dim, dp * dp);
    for (int i = 0; i < dp; ++i) m.channel_gen.bias->value.at(i * dp + i) = 1.0;
    m.point_gen = make_linear_zero(ps, name + ".point", dim, points * points);
    for (int p = 0; p < points; ++p) m.point_gen.bias->value.at(p * points + p) = 1.0;
    m.out_proj = make_linear_zero(ps, name + ".out", points * dp, dim);
    m.ln = make_layer_norm(ps, name + ".ln", dim);
    return m;
}

inline Var qv_mix(const QVMixer& m, const Var& q, const backend::FeaturePyramid& pyr,
                  const BoxSet& boxes) {
    if (q->value.ndim() != 2) throw InputError("qv_mix: queries must be [N, D_q]");
    const int n = q->value.dim(0);
    if (boxes.size() != n) throw InputError("qv_mix: box count does not match queries");
    if (static_cast<int>(pyr.levels.size()) != m.levels || pyr.dp != m.dp)
        throw ConfigError("qv_mix: pyramid does not match mixer geometry");
    const int p = m.points;

    Tensor cx({n, p}), cy({n, p}), bw({n, p}), bh({n, p});
    for (int i = 0; i < n; ++i) {
        const Box& b = boxes.boxes[static_cast<std::size_t>(i)];
        for (int k = 0; k < p; ++k) {
            cx.at(i, k) = b.cx;
            cy.at(i, k) = b.cy;
            bw.at(i, k) = b.w;
            bh.at(i, k) = b.h;
        }
    }
    Var off = reshape(m.offset_gen(q), {n * p, 3});
    Var dx = reshape(column(off, 0), {n, p});
    Var dy = reshape(column(off, 1), {n, p});
    Var dt = reshape(column(off, 2), {n, p});
    Var x = add(constant(cx), mul(dx, constant(bw)));
    Var y = add(constant(cy), mul(dy, constant(bh)));
    const double half_t = (pyr.t - 1) / 2.0;
    Var t = add_scalar(scale(dt, half_t), half_t);
    Var weights = reshape(softmax_last(reshape(m.level_gen(q), {n * p, m.levels})),
                          {n, p, m.levels});

    Var sampled = pyramid_sample(pyr.levels, x, y, t, weights);     // [N,P,Dp]
    Var mixed = relu(bmm(sampled, reshape(m.channel_gen(q), {n, m.dp, m.dp})));
    mixed = relu(bmm(reshape(m.point_gen(q), {n, p, p}), mixed));   // [N,P,Dp]
    return m.ln(add(q, m.out_proj(reshape(mixed, {n, p * m.dp}))));
}

// ---- box refinement ----

// Center offsets are scaled by the current size; sizes update on a log scale,
// so a zero offset is exactly the identity. Centers clamp to [0,1], sizes to
// (1e-4, 1]; coordinates clamped from strictly outside stop receiving
// gradient, while a size resting exactly on the 1.0 ceiling stays trainable.
inline Var update_boxes(const BoxSet& prev, const Var& delta) {
    const int n = prev.size();
    if (delta->value.ndim() != 2 || delta->value.dim(0) != n || delta->value.dim(1) != 4)
        throw InputError("update_boxes: delta must be [N, 4]");
    Tensor cx({n}), cy({n}), w({n}), h({n});
    for (int i = 0; i < n; ++i) {
        const Box& b = prev.boxes[static_cast<std::size_t>(i)];
        cx.at(i) = b.cx;
        cy.at(i) = b.cy;
        w.at(i) = b.w;
        h.at(i) = b.h;
    }
    Var ncx = clamp(add(constant(cx), mul(column(delta, 0), constant(w))), 0.0, 1.0);
    Var ncy = clamp(add(constant(cy), mul(column(delta, 1), constant(h))), 0.0, 1.0);
    Var nw = clamp(mul(constant(w), vexp(column(delta, 2))), 1e-4, 1.0);
    Var nh = clamp(mul(constant(h), vexp(column(delta, 3))), 1e-4, 1.0);
    return stack_cols({ncx, ncy, nw, nh});
}

inline BoxSet to_box_set(const Tensor& boxes, const Tensor& score_logits, int stage) {
    if (boxes.ndim() != 2 || boxes.dim(1) != 4 || score_logits.ndim() != 1 ||
        score_logits.dim(0) != boxes.dim(0))
        throw InputError("to_box_set: need [N, 4] boxes and [N] logits");
    BoxSet out;
    out.stage = stage;
    for (int i = 0; i < boxes.dim(0); ++i) {
        out.boxes.push_back({boxes.at(i, 0), boxes.at(i, 1), boxes.at(i, 2), boxes.at(i, 3)});
        out.person_scores.push_back(1.0 / (1.0 + std::exp(-score_logits.at(i))));
    }
    out.validate();
    return out;
}

// ---- spatial block ----

struct SOmb {
    QQMixer qq;
    QVMixer qv;
    Mlp score_head;  // D_q -> D_q -> 1
    Mlp box_head;    // D_q -> D_q -> 4
};

inline SOmb make_somb(ParamStore& ps, const std::string& name, const HeadConfig& cfg,
                      int num_levels, int pyramid_dp, Rng& rng) {
    SOmb s;
    s.qq = make_qq_mixer(ps, name + ".qq", cfg.query_dim, cfg.heads, rng);
    s.qv = make_qv_mixer(ps, name + ".qv", cfg.query_dim, cfg.qv_points, num_levels, pyramid_dp,
                         rng);
    // Zero-initialized outputs: scores start at 0.5 and boxes start unchanged.
    s.score_head = make_mlp(ps, name + ".score", cfg.query_dim, cfg.query_dim, 1, rng, true);
    s.box_head = make_mlp(ps, name + ".box", cfg.query_dim, cfg.query_dim, 4, rng, true);
    return s;
}

struct SombOutput {
    Var queries;       // [N, D_q]
    Var score_logits;  // [N]
    Var box_delta;     // [N, 4]
};

inline SombOutput somb_forward(const SOmb& s, const Var& q_s,
                               const backend::FeaturePyramid& pyr, const BoxSet& boxes) {
    Var h = qv_mix(s.qv, qq_mix(s.qq, q_s, boxes), pyr, boxes);
    SombOutput out;
    out.queries = h;
    out.score_logits = reshape(s.score_head(h), {h->value.dim(0)});
    out.box_delta = s.box_head(h);
    return out;
}

// ---- temporal block ----

// The condition projection has no bias, so a zero condition vector is exactly
// the unconditioned path.
struct TOmb {
    QQMixer qq;
    QVMixer qv;
    Linear cond_proj;  // D -> D_q
};

inline TOmb make_tomb(ParamStore& ps, const std::string& name, const HeadConfig& cfg,
                      int num_levels, int pyramid_dp, int feature_dim, Rng& rng) {
    TOmb t;
    t.qq = make_qq_mixer(ps, name + ".qq", cfg.query_dim, cfg.heads, rng);
    t.qv = make_qv_mixer(ps, name + ".qv", cfg.query_dim, cfg.qv_points, num_levels, pyramid_dp,
                         rng);
    t.cond_proj = make_linear(ps, name + ".cond", feature_dim, cfg.query_dim, rng,
                              /*with_bias=*/false);
    return t;
}

inline Var tomb_forward(const TOmb& t, const Var& q_t, const backend::FeaturePyramid& pyr,
                        const Tensor& f_v, const Tensor& f_t_matched, const BoxSet& boxes,
                        ConditionMode mode) {
    auto condition = [&](const Tensor& vec) {
        if (vec.ndim() != 1) throw InputError("tomb_forward: condition must be a vector");
        return reshape(t.cond_proj(reshape(constant(vec), {1, vec.dim(0)})),
                       {t.cond_proj.weight->value.dim(0)});
    };
    switch (mode) {
        case ConditionMode::pre_video:
            return qv_mix(t.qv, add_rowvec(qq_mix(t.qq, q_t, boxes), condition(f_v)), pyr, boxes);
        case ConditionMode::post_video:
            return add_rowvec(qv_mix(t.qv, qq_mix(t.qq, q_t, boxes), pyr, boxes), condition(f_v));
        case ConditionMode::pre_text:
            return qv_mix(t.qv, add_rowvec(qq_mix(t.qq, q_t, boxes), condition(f_t_matched)), pyr,
                          boxes);
        case ConditionMode::none:
            return qv_mix(t.qv, qq_mix(t.qq, q_t, boxes), pyr, boxes);
    }
    throw ConfigError("tomb_forward: unknown condition mode");
}

// ---- cascade ----

struct QueryState {
    Var spatial_queries;   // [N, D_q]
    Var temporal_queries;  // [N, D_q]
    BoxSet boxes;          // detached snapshot consumed by the next stage
    Var boxes_var;         // [N, 4] differentiable boxes of this stage
    Var score_logits;      // [N]
    Var action_logits;     // [N, C]
    int stage = 0;
};

struct CascadeParams {
    HeadConfig cfg;
    Var query_embed_s;  // [N, D_q]
    Var query_embed_t;  // [N, D_q]
    std::vector<SOmb> sombs;
    std::vector<TOmb> tombs;
};

inline CascadeParams make_cascade(ParamStore& ps, const std::string& name, const HeadConfig& cfg,
                                  int num_levels, int pyramid_dp, int feature_dim, Rng& rng) {
    cfg.validate();
    CascadeParams p;
    p.cfg = cfg;
    p.query_embed_s =
        ps.create(name + ".query_s", xavier_uniform(cfg.num_queries, cfg.query_dim, rng));
    p.query_embed_t =
        ps.create(name + ".query_t", xavier_uniform(cfg.num_queries, cfg.query_dim, rng));
    for (int m = 0; m < cfg.num_stages; ++m) {
        const std::string tag = name + ".stage" + std::to_string(m);
        p.sombs.push_back(make_somb(ps, tag + ".s", cfg, num_levels, pyramid_dp, rng));
        p.tombs.push_back(make_tomb(ps, tag + ".t", cfg, num_levels, pyramid_dp, feature_dim, rng));
    }
    return p;
}

// One full pass: stage m refines the previous stage's detached boxes, updates
// the spatial and temporal queries, and scores every query against the
// vocabulary through the fused alignment.
inline std::vector<QueryState> cascade_forward(const CascadeParams& p,
                                               const backend::FeaturePyramid& pyr,
                                               const backend::VLMFeatureBundle& bundle,
                                               const dfa::Vocabulary& vocabulary,
                                               const dfa::FusionParams& fusion,
                                               const Linear& dfa_proj, const BoxSet& prior_boxes) {
    if (prior_boxes.size() != p.cfg.num_queries)
        throw InputError("cascade_forward: prior box count does not match num_queries");
    const Tensor f_t =
        prior::prematch_text(bundle.video_feature, bundle.text_features).feature;

    std::vector<QueryState> states;
    Var q_s = p.query_embed_s;
    Var q_t = p.query_embed_t;
    BoxSet boxes = prior_boxes;
    for (int m = 0; m < p.cfg.num_stages; ++m) {
        const SombOutput so = somb_forward(p.sombs[static_cast<std::size_t>(m)], q_s, pyr, boxes);
        Var boxes_var = update_boxes(boxes, so.box_delta);
        BoxSet next = to_box_set(boxes_var->value, so.score_logits->value, m + 1);
        Var q_t_next = tomb_forward(p.tombs[static_cast<std::size_t>(m)], q_t, pyr,
                                    bundle.video_feature, f_t, next, p.cfg.condition_mode);
        Var act = dfa::classify(q_t_next, bundle.video_feature, vocabulary, fusion, dfa_proj,
                                bundle.temperature);
        QueryState st;
        st.spatial_queries = so.queries;
        st.temporal_queries = q_t_next;
        st.boxes = next;
        st.boxes_var = boxes_var;
        st.score_logits = so.score_logits;
        st.action_logits = act;
        st.stage = m + 1;
        states.push_back(st);
        q_s = so.queries;
        q_t = q_t_next;
        boxes = next;
    }
    return states;
}

inline std::vector<criterion::StagePrediction> stage_predictions(
    const std::vector<QueryState>& states) {
    std::vector<criterion::StagePrediction> out;
    out.reserve(states.size());
    for (const auto& st : states)
        out.push_back({st.score_logits, st.boxes_var, st.action_logits});
    return out;
}

}  // namespace openmixer::head

// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "openmixer/backend.hpp"
#include "openmixer/common.hpp"
#include "openmixer/config.hpp"
#include "openmixer/criterion.hpp"
#include "openmixer/data.hpp"
#include "openmixer/dfa.hpp"
#include "openmixer/head.hpp"
#include "openmixer/prior.hpp"

namespace openmixer::model {

struct OpenMixerModel {
    config::RunConfig cfg;
    ParamStore params;
    backend::PyramidParams pyramid;
    head::CascadeParams cascade;
    dfa::FusionParams fusion;
    Linear dfa_proj;  // query space -> backbone feature space for fusion
};

inline OpenMixerModel make_model(const config::RunConfig& cfg) {
    cfg.validate();
    OpenMixerModel m;
    m.cfg = cfg;
    Rng rng(cfg.seed);
    const int d = cfg.backend.feature_dim;
    m.pyramid = backend::make_pyramid_params(m.params, "pyramid", d, cfg.pyramid, rng);
    m.cascade = head::make_cascade(m.params, "cascade", cfg.head,
                                   static_cast<int>(cfg.pyramid.strides.size()), cfg.pyramid.dp, d,
                                   rng);
    // zsr_tl trains localization only; recognition stays zero-shot via a
    // pinned full-weight fusion regardless of the configured fusion mode.
    dfa::FusionMode fusion_mode = cfg.fusion.mode;
    double fixed_lambda = cfg.fusion.fixed_lambda;
    if (cfg.training_mode == config::TrainingMode::zsr_tl) {
        fusion_mode = dfa::FusionMode::fixed;
        fixed_lambda = 1.0;
    }
    m.fusion = dfa::make_fusion(m.params, "fusion", cfg.head.num_queries, fusion_mode, fixed_lambda);
    m.dfa_proj = make_linear(m.params, "dfa_proj", cfg.head.query_dim, d, rng);
    return m;
}

// Parameter name prefixes held fixed during zsr_tl training: the alignment
// projection and the fusion gate.
inline std::vector<std::string> frozen_prefixes(const OpenMixerModel& m) {
    if (m.cfg.training_mode != config::TrainingMode::zsr_tl) return {};
    return {"dfa_proj.", "fusion."};
}

struct ClipForward {
    backend::VLMFeatureBundle bundle;
    BoxSet prior_boxes;
    std::vector<head::QueryState> states;
};

// Per-call randomness and replacement boxes for the configured prior source.
struct PriorRuntime {
    Rng* rng = nullptr;
    const std::vector<Box>* replacement_boxes = nullptr;
};

inline BoxSet make_prior_boxes(const OpenMixerModel& m, const backend::VLMFeatureBundle& bundle,
                               int keyframe, const PriorRuntime& rt) {
    const auto& pc = m.cfg.prior;
    prior::PriorSource source = pc.source;
    // Replacement sources fall back to attention centers on frames without
    // boxes (unannotated keyframes during sliding-window inference).
    if ((source == prior::PriorSource::ground_truth || source == prior::PriorSource::external) &&
        (rt.replacement_boxes == nullptr || rt.replacement_boxes->empty()))
        source = prior::PriorSource::attention;
    const prior::AttentionMap map = prior::compute_attention(bundle, keyframe);
    const auto centers = prior::sample_prior_locations(map, m.cfg.head.num_queries, pc.sample_mode,
                                                       rt.rng, pc.temperature);
    prior::PriorConfig pcfg;
    pcfg.source = source;
    pcfg.rng = rt.rng;
    pcfg.replacement_boxes = rt.replacement_boxes;
    return prior::init_box_queries(centers, pcfg);
}

inline ClipForward forward_clip(const OpenMixerModel& m, const VideoClip& clip,
                                const dfa::Vocabulary& vocabulary, const PriorRuntime& rt = {}) {
    ClipForward out;
    out.bundle = backend::encode_clip(clip, vocabulary, m.cfg.backend);
    out.prior_boxes = make_prior_boxes(m, out.bundle, clip.keyframe(), rt);
    const backend::FeaturePyramid pyr =
        backend::build_pyramid(constant(out.bundle.patch_features), m.pyramid, m.cfg.pyramid);
    out.states = head::cascade_forward(m.cascade, pyr, out.bundle, vocabulary, m.fusion, m.dfa_proj,
                                       out.prior_boxes);
    return out;
}

inline Box box_from_rect(const Rect& r) {
    return Box{0.5 * (r.x1 + r.x2), 0.5 * (r.y1 + r.y2), r.x2 - r.x1, r.y2 - r.y1};
}

// Normalized center-form ground-truth boxes present at one frame.
inline std::vector<Box> record_boxes_at(const data::AnnotationRecord& rec, int frame) {
    std::vector<Box> out;
    for (const auto& tube : rec.tubes)
        for (const auto& [f, r] : tube.frames)
            if (f == frame) out.push_back(box_from_rect(r.scaled(1.0 / rec.width, 1.0 / rec.height)));
    return out;
}

// Matching targets for the keyframe of one record. Every tube class must be
// present in the index; training vocabularies contain base classes only, so
// this doubles as the open-vocabulary hygiene check.
inline criterion::Targets targets_at(const data::AnnotationRecord& rec, int frame,
                                     const std::map<std::string, int>& class_index) {
    criterion::Targets t;
    for (const auto& tube : rec.tubes) {
        const auto it = class_index.find(tube.class_name);
        if (it == class_index.end())
            throw ValidationError("targets_at: class '" + tube.class_name +
                                  "' not in the training vocabulary (" + rec.video_id + ")");
        for (const auto& [f, r] : tube.frames) {
            if (f != frame) continue;
            t.boxes.push_back(box_from_rect(r.scaled(1.0 / rec.width, 1.0 / rec.height)));
            t.class_indices.push_back(it->second);
        }
    }
    return t;
}

inline criterion::LossBreakdown clip_loss(const ClipForward& fwd,
                                          const criterion::Targets& targets,
                                          const criterion::LossWeights& w,
                                          const criterion::CostWeights& cw) {
    return criterion::total_loss(head::stage_predictions(fwd.states), targets, w, cw);
}

// Final-stage detections at one keyframe: every query above the person
// threshold emits one detection per class scored person * softmax(action).
inline std::vector<Detection> keyframe_detections(const ClipForward& fwd,
                                                  const std::string& video_id, int frame_index,
                                                  double person_threshold) {
    const auto& st = fwd.states.back();
    const Tensor& logits = st.action_logits->value;  // [N, C]
    const int n = logits.dim(0), c = logits.dim(1);
    std::vector<Detection> out;
    for (int i = 0; i < n; ++i) {
        const double person = st.boxes.person_scores[static_cast<std::size_t>(i)];
        if (person < person_threshold) continue;
        double mx = logits.at(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
        double z = 0.0;
        for (int j = 0; j < c; ++j) z += std::exp(logits.at(i, j) - mx);
        Rect r = Rect::from_box(st.boxes.boxes[static_cast<std::size_t>(i)]);
        r.x1 = std::max(0.0, r.x1);
        r.y1 = std::max(0.0, r.y1);
        r.x2 = std::min(1.0, r.x2);
        r.y2 = std::min(1.0, r.y2);
        for (int j = 0; j < c; ++j) {
            Detection d;
            d.video_id = video_id;
            d.frame_index = frame_index;
            d.class_index = j;
            d.score = person * (std::exp(logits.at(i, j) - mx) / z);
            d.box = r;
            out.push_back(std::move(d));
        }
    }
    return out;
}

// Sliding-window inference over a whole video: a window is sampled at every
// keyframe_step-th frame and detections are emitted at its keyframe.
inline std::vector<Detection> detect_video(const OpenMixerModel& m, const Tensor& video,
                                           double frame_rate, const std::string& video_id,
                                           const dfa::Vocabulary& vocabulary, Rng* rng = nullptr,
                                           const data::AnnotationRecord* gt_record = nullptr) {
    const int total = video.dim(0);
    std::vector<Detection> out;
    for (int k = 0; k < total; k += m.cfg.eval.keyframe_step) {
        VideoClip clip = data::sample_frames(video, frame_rate, k, m.cfg.train.frames,
                                             m.cfg.train.frame_stride);
        clip.video_id = video_id;
        std::vector<Box> gt_boxes;
        if (gt_record != nullptr) gt_boxes = record_boxes_at(*gt_record, k);
        PriorRuntime rt;
        rt.rng = rng;
        rt.replacement_boxes = gt_boxes.empty() ? nullptr : &gt_boxes;
        const ClipForward fwd = forward_clip(m, clip, vocabulary, rt);
        auto dets = keyframe_detections(fwd, video_id, k, m.cfg.eval.person_threshold);
        out.insert(out.end(), dets.begin(), dets.end());
    }
    return out;
}

}  // namespace openmixer::model

// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "openmixer/backend.hpp"
#include "openmixer/common.hpp"
#include "openmixer/data.hpp"
#include "openmixer/dfa.hpp"
#include "openmixer/model.hpp"
#include "openmixer/nn.hpp"

namespace openmixer::train {

// Vocabulary for an ordered class list; prompts must cover every class.
inline dfa::Vocabulary vocabulary_for(const std::vector<std::string>& classes,
                                      const std::map<std::string, std::vector<std::string>>& prompts,
                                      const backend::BackendConfig& bcfg,
                                      const std::set<std::string>& novel = {}) {
    std::vector<dfa::VocabEntry> entries;
    for (const auto& name : classes) {
        const auto it = prompts.find(name);
        if (it == prompts.end())
            throw ValidationError("vocabulary_for: no prompts for class '" + name + "'");
        dfa::VocabEntry e;
        e.name = name;
        e.prompts = it->second;
        e.is_novel = novel.count(name) != 0;
        entries.push_back(std::move(e));
    }
    return backend::build_vocabulary(entries, bcfg);
}

// Evaluation vocabulary: base classes first, then novel, flags set. Training
// uses the base prefix only, so indices agree between the two.
inline dfa::Vocabulary full_vocabulary(const data::SplitSpec& split,
                                       const std::map<std::string, std::vector<std::string>>& prompts,
                                       const backend::BackendConfig& bcfg) {
    std::vector<std::string> order = split.base_classes;
    order.insert(order.end(), split.novel_classes.begin(), split.novel_classes.end());
    return vocabulary_for(order, prompts, bcfg,
                          std::set<std::string>(split.novel_classes.begin(), split.novel_classes.end()));
}

struct TrainData {
    const std::vector<data::AnnotationRecord>* records = nullptr;
    const std::map<std::string, Tensor>* clips = nullptr;
    data::SplitSpec split;
    dfa::Vocabulary train_vocabulary;  // base classes only
    double frame_rate = 8.0;
};

inline TrainData make_train_data(const std::vector<data::AnnotationRecord>& records,
                                 const std::map<std::string, Tensor>& clips,
                                 const data::SplitSpec& split,
                                 const std::map<std::string, std::vector<std::string>>& prompts,
                                 const backend::BackendConfig& bcfg, double frame_rate = 8.0) {
    TrainData d;
    d.records = &records;
    d.clips = &clips;
    d.split = split;
    d.train_vocabulary = vocabulary_for(split.base_classes, prompts, bcfg);
    d.frame_rate = frame_rate;
    return d;
}

struct TrainResult {
    int steps = 0;
    int epochs_run = 0;
    int novel_reads = 0;          // open-vocabulary hygiene counter, must stay 0
    std::vector<double> step_totals;
};

// Mixes the epoch index into the run seed so each epoch draws from its own
// stream; resuming at an epoch boundary then replays the exact trajectory.
inline Rng epoch_rng(std::uint64_t seed, int epoch) {
    return Rng(seed + 0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(epoch + 1));
}

namespace detail {

struct Sample {
    const data::AnnotationRecord* record;
    int keyframe;
};

inline nlohmann::json step_record(int epoch, int step, double lr,
                                  const criterion::LossBreakdown& lb, int batch_size) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : lb.per_stage)
        stages.push_back({{"bce", s.bce}, {"l1", s.l1}, {"giou", s.giou}, {"act", s.act}});
    return {{"epoch", epoch},
            {"step", step},
            {"lr", lr},
            {"batch_size", batch_size},
            {"stages", stages},
            {"total", lb.total->value.raw()[0]}};
}

}  // namespace detail

// One optimizer step per batch, gradients averaged over the batch. The log
// stream, when given, receives one JSON line per sample forward.
inline TrainResult train_model(model::OpenMixerModel& m, AdamW& opt, const TrainData& data,
                               std::ostream* log = nullptr, int start_epoch = 0,
                               const std::function<void(int)>& on_epoch_end = {}) {
    const auto& cfg = m.cfg;
    if (data.records == nullptr || data.clips == nullptr)
        throw InputError("train_model: missing dataset");
    const std::set<std::string> base(data.split.base_classes.begin(), data.split.base_classes.end());

    std::map<std::string, int> class_index;
    for (std::size_t i = 0; i < data.train_vocabulary.classes.size(); ++i)
        class_index[data.train_vocabulary.classes[i].name] = static_cast<int>(i);

    // Train-tagged records whose tubes are all base-class. Mixed or novel
    // records are excluded up front; the per-use guard below backstops this.
    std::vector<const data::AnnotationRecord*> pool;
    for (const auto& r : *data.records) {
        if (r.split_tag != "train") continue;
        bool all_base = true;
        for (const auto& tube : r.tubes)
            if (!base.count(tube.class_name)) all_base = false;
        if (!all_base) continue;
        if (!data.clips->count(r.video_id))
            throw InputError("train_model: no clip for video " + r.video_id);
        pool.push_back(&r);
    }
    if (pool.empty()) throw InputError("train_model: empty training pool");

    TrainResult res;
    for (int epoch = start_epoch; epoch < cfg.train.epochs; ++epoch) {
        Rng rng = epoch_rng(cfg.seed, epoch);
        std::vector<detail::Sample> samples;
        samples.reserve(pool.size());
        for (const auto* rec : pool)
            samples.push_back(
                {rec, static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(rec->frame_count)))});
        rng.shuffle(samples);

        for (std::size_t start = 0; start < samples.size();
             start += static_cast<std::size_t>(cfg.train.batch_size)) {
            const std::size_t stop =
                std::min(samples.size(), start + static_cast<std::size_t>(cfg.train.batch_size));
            const int batch_n = static_cast<int>(stop - start);
            m.params.zero_grad();
            double step_total = 0.0;
            for (std::size_t s = start; s < stop; ++s) {
                const auto& [rec, keyframe] = samples[s];
                for (const auto& tube : rec->tubes) {
                    if (!base.count(tube.class_name)) {
                        ++res.novel_reads;
                        throw ValidationError("train_model: novel class '" + tube.class_name +
                                              "' reached the training loop");
                    }
                }
                VideoClip clip = data::sample_frames(data.clips->at(rec->video_id), data.frame_rate,
                                                     keyframe, cfg.train.frames,
                                                     cfg.train.frame_stride);
                clip.video_id = rec->video_id;
                std::vector<Box> gt_boxes;
                if (cfg.prior.source == prior::PriorSource::ground_truth)
                    gt_boxes = model::record_boxes_at(*rec, keyframe);
                model::PriorRuntime rt;
                rt.rng = &rng;
                rt.replacement_boxes = gt_boxes.empty() ? nullptr : &gt_boxes;
                const model::ClipForward fwd = model::forward_clip(m, clip, data.train_vocabulary, rt);
                const criterion::Targets targets = model::targets_at(*rec, keyframe, class_index);
                const criterion::LossBreakdown lb = model::clip_loss(fwd, targets, cfg.loss, cfg.cost);
                backward(scale(lb.total, 1.0 / batch_n));
                step_total += lb.total->value.raw()[0] / batch_n;
                if (log != nullptr)
                    *log << detail::step_record(epoch, res.steps, cfg.optimizer.lr, lb, batch_n)
                         << '\n';
            }
            opt.step(m.params);
            ++res.steps;
            res.step_totals.push_back(step_total);
        }
        ++res.epochs_run;
        if (on_epoch_end) on_epoch_end(epoch);
    }
    return res;
}

inline AdamW make_optimizer(const model::OpenMixerModel& m) {
    AdamW::Config oc;
    oc.lr = m.cfg.optimizer.lr;
    oc.weight_decay = m.cfg.optimizer.weight_decay;
    oc.clip_norm = m.cfg.optimizer.clip_norm;
    oc.freeze_prefixes = model::frozen_prefixes(m);
    return AdamW(oc);
}

}  // namespace openmixer::train

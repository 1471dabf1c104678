// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "openmixer/checkpoint.hpp"
#include "openmixer/common.hpp"
#include "openmixer/config.hpp"
#include "openmixer/data.hpp"
#include "openmixer/eval.hpp"
#include "openmixer/model.hpp"
#include "openmixer/train.hpp"
#include "openmixer/viz.hpp"

namespace openmixer::cli {

// Annotations, clips, prompts and split resolved from the config paths.
struct DatasetBundle {
    std::vector<data::AnnotationRecord> records;
    std::map<std::string, Tensor> clips;
    double frame_rate = 8.0;
    std::map<std::string, std::vector<std::string>> prompts;
    data::SplitSpec split;

    std::vector<const data::AnnotationRecord*> tagged(const std::string& tag) const {
        std::vector<const data::AnnotationRecord*> out;
        for (const auto& r : records)
            if (r.split_tag == tag) out.push_back(&r);
        return out;
    }
};

inline std::vector<std::string> class_names_of(const std::vector<data::AnnotationRecord>& records) {
    std::set<std::string> names;
    for (const auto& r : records)
        for (const auto& t : r.tubes) names.insert(t.class_name);
    return {names.begin(), names.end()};
}

inline DatasetBundle load_dataset(const config::DatasetPaths& paths, bool need_clips = true) {
    if (paths.annotations.empty()) throw ConfigError("dataset.annotations not set");
    if (paths.prompts.empty()) throw ConfigError("dataset.prompts not set");
    if (paths.split.empty()) throw ConfigError("dataset.split not set");
    DatasetBundle b;
    b.records = data::load_annotations(paths.annotations);
    if (b.records.empty()) throw InputError(paths.annotations + ": no records");
    b.prompts = data::load_prompts(paths.prompts, class_names_of(b.records));
    b.split = data::load_split(paths.split);
    if (need_clips) {
        if (paths.clips_dir.empty()) throw ConfigError("dataset.clips_dir not set");
        for (const auto& r : b.records) {
            const std::string path = paths.clips_dir + "/" + r.video_id + ".omv";
            VideoClip clip = data::load_clip(path);
            b.frame_rate = clip.frame_rate;
            b.clips.emplace(r.video_id, std::move(clip.frames));
        }
    }
    return b;
}

struct SynthArgs {
    std::string out_dir;
    int classes = 3;
    int clips_per_class = 4;
    int frames = 24;
    int width = 64;
    int height = 64;
    int rect_size = 16;
    double frame_rate = 8.0;
    double train_fraction = 0.75;
    std::uint64_t seed = 1;
};

// Writes annotations.txt, prompts.json and clips/<video>.omv under out_dir.
inline data::SyntheticDataset cmd_synth(const SynthArgs& a) {
    if (a.out_dir.empty()) throw InputError("cmd_synth: out_dir not set");
    data::SyntheticConfig scfg;
    scfg.num_classes = a.classes;
    scfg.clips_per_class = a.clips_per_class;
    scfg.frames = a.frames;
    scfg.width = a.width;
    scfg.height = a.height;
    scfg.rect_size = a.rect_size;
    scfg.frame_rate = a.frame_rate;
    scfg.train_fraction = a.train_fraction;
    const data::SyntheticDataset ds = data::generate_synthetic(scfg, a.seed);

    std::filesystem::create_directories(a.out_dir + "/clips");
    data::save_annotations(a.out_dir + "/annotations.txt", ds.annotations);
    data::save_prompts(a.out_dir + "/prompts.json", ds.prompts);
    for (const auto& [id, frames] : ds.clips) {
        VideoClip clip;
        clip.frames = frames;
        clip.frame_rate = a.frame_rate;
        clip.video_id = id;
        data::save_clip(a.out_dir + "/clips/" + id + ".omv", clip);
    }
    return ds;
}

struct SplitArgs {
    std::string annotations;
    std::string out;
    double ratio = 0.5;  // base fraction, 0.5 or 0.75
    std::uint64_t seed = 0;
    std::string dataset_name = "dataset";
};

inline data::SplitSpec cmd_split(const SplitArgs& a) {
    data::SplitRatio ratio;
    if (a.ratio == 0.5) {
        ratio = data::SplitRatio::half;
    } else if (a.ratio == 0.75) {
        ratio = data::SplitRatio::three_quarter;
    } else {
        throw InputError("cmd_split: ratio must be 0.5 or 0.75");
    }
    const auto classes = class_names_of(data::load_annotations(a.annotations));
    const data::SplitSpec spec = data::make_split(classes, ratio, a.seed, a.dataset_name);
    if (!a.out.empty()) data::save_split(a.out, spec);
    return spec;
}

struct TrainCmdResult {
    train::TrainResult result;
    std::string checkpoint_path;
};

// Trains from the config's dataset, checkpointing every epoch into out_dir.
// resume_path restarts from a stored epoch boundary.
inline TrainCmdResult cmd_train(const config::RunConfig& cfg, const std::string& out_dir,
                                const std::string& resume_path = "") {
    cfg.validate();
    const DatasetBundle b = load_dataset(cfg.dataset);
    std::filesystem::create_directories(out_dir);

    model::OpenMixerModel m = model::make_model(cfg);
    AdamW opt = train::make_optimizer(m);
    int start_epoch = 0;
    if (!resume_path.empty()) {
        const ckpt::Checkpoint c = ckpt::load_checkpoint(resume_path);
        ckpt::restore(m, c, &opt);
        start_epoch = c.epoch;
    }
    const train::TrainData data =
        train::make_train_data(b.records, b.clips, b.split, b.prompts, cfg.backend, b.frame_rate);

    std::ofstream log(out_dir + "/train_log.jsonl",
                      resume_path.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw InputError("cannot write training log in " + out_dir);
    const auto save_epoch = [&](int epoch) {
        ckpt::save_checkpoint(out_dir + "/checkpoint_epoch" + std::to_string(epoch + 1) + ".bin",
                              ckpt::snapshot(m, &opt, epoch + 1));
    };
    TrainCmdResult out;
    out.result = train::train_model(m, opt, data, &log, start_epoch, save_epoch);
    out.checkpoint_path = out_dir + "/checkpoint.bin";
    ckpt::save_checkpoint(out.checkpoint_path, ckpt::snapshot(m, &opt, cfg.train.epochs));
    return out;
}

inline std::vector<Detection> run_inference(const config::RunConfig& cfg, const DatasetBundle& b,
                                            const dfa::Vocabulary& vocabulary,
                                            const std::string& checkpoint_path,
                                            const std::vector<const data::AnnotationRecord*>& records) {
    model::OpenMixerModel m = model::make_model(cfg);
    const ckpt::Checkpoint c = ckpt::load_checkpoint(checkpoint_path);
    ckpt::restore(m, c);
    Rng rng(cfg.seed);
    std::vector<Detection> dets;
    for (const auto* rec : records) {
        const data::AnnotationRecord* gt =
            cfg.prior.source == prior::PriorSource::ground_truth ? rec : nullptr;
        auto d = model::detect_video(m, b.clips.at(rec->video_id), b.frame_rate, rec->video_id,
                                     vocabulary, &rng, gt);
        dets.insert(dets.end(), d.begin(), d.end());
    }
    return dets;
}

struct EvalCmdResult {
    eval::MetricsReport video;
    eval::MetricsReport frame;
    std::string report_text;
};

namespace detail {

inline std::string metrics_line(const char* tag, const eval::MetricsReport& r) {
    std::ostringstream s;
    s << tag << " mean " << r.mean_ap;
    if (r.has_base) s << " base " << r.base_ap;
    if (r.has_novel) s << " novel " << r.novel_ap;
    return s.str();
}

}  // namespace detail

// Scores either a checkpointed model on the test records or an external
// detection file against the same ground truth.
inline EvalCmdResult cmd_eval(const config::RunConfig& cfg, const std::string& checkpoint_path,
                              const std::string& detections_path = "") {
    cfg.validate();
    const bool external = !detections_path.empty();
    const DatasetBundle b = load_dataset(cfg.dataset, !external);
    const dfa::Vocabulary vocab = train::full_vocabulary(b.split, b.prompts, cfg.backend);
    const eval::EvalProtocol protocol = cfg.eval.to_protocol();
    if (protocol.mode == eval::ProtocolMode::novel_only && b.split.novel_classes.empty())
        throw ConfigError("cmd_eval: novel protocol but the split has no novel classes");

    const auto test = b.tagged("test");
    if (test.empty()) throw InputError("cmd_eval: no test records");

    std::vector<Detection> dets;
    if (external) {
        dets = data::load_detections(detections_path, vocab.names());
    } else {
        if (checkpoint_path.empty()) throw InputError("cmd_eval: no checkpoint or detection file");
        dets = run_inference(cfg, b, vocab, checkpoint_path, test);
    }

    std::vector<data::AnnotationRecord> test_records;
    for (const auto* r : test) test_records.push_back(*r);
    const auto gt = data::to_gt_tubes(test_records, vocab.names());
    const auto tubes = eval::link_tubes(dets, protocol.continuity_iou);

    EvalCmdResult out;
    out.video = eval::video_map(tubes, gt, protocol, vocab.novel_flags());
    out.frame = eval::frame_map(dets, gt, protocol, vocab.novel_flags());
    out.report_text = detail::metrics_line("video_map", out.video) + "\n" +
                      detail::metrics_line("frame_map", out.frame) + "\n";
    return out;
}

struct DetectArgs {
    std::string video_id;  // empty detects every test video
    std::string out_path;
    std::string render_dir;  // empty skips rendering
};

// Runs detection and writes the rows; optionally renders every annotated
// frame with detections in blue and ground truth in yellow.
inline std::vector<Detection> cmd_detect(const config::RunConfig& cfg,
                                         const std::string& checkpoint_path, const DetectArgs& a) {
    cfg.validate();
    if (a.out_path.empty()) throw InputError("cmd_detect: out_path not set");
    const DatasetBundle b = load_dataset(cfg.dataset);
    const dfa::Vocabulary vocab = train::full_vocabulary(b.split, b.prompts, cfg.backend);

    std::vector<const data::AnnotationRecord*> records;
    if (a.video_id.empty()) {
        records = b.tagged("test");
        if (records.empty()) throw InputError("cmd_detect: no test records");
    } else {
        for (const auto& r : b.records)
            if (r.video_id == a.video_id) records.push_back(&r);
        if (records.empty()) throw InputError("cmd_detect: unknown video " + a.video_id);
    }

    const std::vector<Detection> dets = run_inference(cfg, b, vocab, checkpoint_path, records);
    data::save_detections(a.out_path, dets, vocab.names());

    if (!a.render_dir.empty()) {
        std::filesystem::create_directories(a.render_dir);
        for (const auto* rec : records) {
            const Tensor& video = b.clips.at(rec->video_id);
            for (int f = 0; f < video.dim(0); ++f) {
                std::vector<viz::Overlay> overlays;
                for (const auto& tube : rec->tubes)
                    for (const auto& [fr, box] : tube.frames)
                        if (fr == f)
                            overlays.push_back({box.scaled(1.0 / rec->width, 1.0 / rec->height),
                                                "", viz::kGroundTruthColor});
                for (const auto& d : dets)
                    if (d.video_id == rec->video_id && d.frame_index == f)
                        overlays.push_back(
                            {d.box,
                             viz::caption_text(vocab.classes[static_cast<std::size_t>(d.class_index)].name,
                                               d.score),
                             viz::kDetectionColor});
                const viz::Image im = viz::render_frame(video, f, overlays);
                viz::save_ppm(a.render_dir + "/" + rec->video_id + "_f" + std::to_string(f) + ".ppm",
                              im);
            }
        }
    }
    return dets;
}

}  // namespace openmixer::cli

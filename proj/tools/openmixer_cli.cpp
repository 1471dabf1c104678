// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "openmixer/cli.hpp"

namespace {

using namespace openmixer;

// Flag overrides shared by train, eval and detect; they mirror config keys.
struct Overrides {
    std::uint64_t seed = 0;
    bool deterministic = false;
    std::string protocol;
    std::string prior_source;
    std::string condition_mode;
    std::string fusion_mode;
    std::string training_mode;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--seed", seed, "run seed");
        cmd->add_flag("--deterministic", deterministic, "single-threaded data order");
        cmd->add_option("--protocol", protocol, "evaluation protocol")
            ->check(CLI::IsMember({"base", "novel", "generalized"}));
        cmd->add_option("--prior-source", prior_source, "box prior source")
            ->check(CLI::IsMember({"attention", "gt", "random", "external"}));
        cmd->add_option("--condition-mode", condition_mode, "temporal block conditioning")
            ->check(CLI::IsMember({"pre_video", "post_video", "pre_text", "none"}));
        cmd->add_option("--fusion-mode", fusion_mode, "alignment fusion mode")
            ->check(CLI::IsMember({"dynamic", "fixed"}));
        cmd->add_option("--training-mode", training_mode, "e2e or zsr_tl")
            ->check(CLI::IsMember({"e2e", "zsr_tl"}));
    }

    void apply(config::RunConfig& cfg, const CLI::App* cmd) const {
        if (cmd->count("--seed")) cfg.seed = seed;
        if (cmd->count("--deterministic")) cfg.deterministic = true;
        if (!protocol.empty()) cfg.eval.protocol = config::parse_protocol(protocol);
        if (!prior_source.empty()) cfg.prior.source = config::parse_prior_source(prior_source);
        if (!condition_mode.empty())
            cfg.head.condition_mode = head::parse_condition_mode(condition_mode);
        if (!fusion_mode.empty()) cfg.fusion.mode = config::parse_fusion_mode(fusion_mode);
        if (!training_mode.empty()) cfg.training_mode = config::parse_training_mode(training_mode);
        cfg.validate();
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"openmixer: open-vocabulary spatio-temporal action detection"};
    app.require_subcommand(1);

    cli::SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--out", synth_args.out_dir, "output directory")->required();
    synth->add_option("--classes", synth_args.classes, "number of classes");
    synth->add_option("--clips-per-class", synth_args.clips_per_class, "clips per class");
    synth->add_option("--frames", synth_args.frames, "frames per clip");
    synth->add_option("--width", synth_args.width, "frame width");
    synth->add_option("--height", synth_args.height, "frame height");
    synth->add_option("--rect-size", synth_args.rect_size, "actor rectangle size");
    synth->add_option("--train-fraction", synth_args.train_fraction, "train split fraction");
    synth->add_option("--seed", synth_args.seed, "generator seed");

    cli::SplitArgs split_args;
    auto* split = app.add_subcommand("split", "make a base/novel class split");
    split->add_option("--annotations", split_args.annotations, "annotation file")->required();
    split->add_option("--out", split_args.out, "split file to write")->required();
    split->add_option("--ratio", split_args.ratio, "base-class fraction (0.5 or 0.75)");
    split->add_option("--seed", split_args.seed, "shuffle seed");
    split->add_option("--name", split_args.dataset_name, "dataset name stored in the file");

    std::string train_config, train_out = "runs", train_resume;
    Overrides train_ov;
    auto* train = app.add_subcommand("train", "train on the base classes");
    train->add_option("--config", train_config, "run config")->required();
    train->add_option("--out", train_out, "output directory");
    train->add_option("--resume", train_resume, "checkpoint to resume from");
    train_ov.add_to(train);

    std::string eval_config, eval_ckpt, eval_dets;
    Overrides eval_ov;
    auto* evalc = app.add_subcommand("eval", "score a checkpoint or a detection file");
    evalc->add_option("--config", eval_config, "run config")->required();
    evalc->add_option("--checkpoint", eval_ckpt, "model checkpoint");
    evalc->add_option("--detections", eval_dets, "external detection file");
    eval_ov.add_to(evalc);

    std::string det_config, det_ckpt;
    cli::DetectArgs det_args;
    Overrides det_ov;
    auto* detect = app.add_subcommand("detect", "write detections for test videos");
    detect->add_option("--config", det_config, "run config")->required();
    detect->add_option("--checkpoint", det_ckpt, "model checkpoint")->required();
    detect->add_option("--out", det_args.out_path, "detection file to write")->required();
    detect->add_option("--video", det_args.video_id, "single video id (default: all test videos)");
    detect->add_option("--render", det_args.render_dir, "directory for rendered frames");
    det_ov.add_to(detect);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            const auto ds = cli::cmd_synth(synth_args);
            std::printf("synth: %zu videos, %zu classes -> %s\n", ds.annotations.size(),
                        ds.class_names.size(), synth_args.out_dir.c_str());
        } else if (split->parsed()) {
            const auto spec = cli::cmd_split(split_args);
            std::printf("split: %zu base, %zu novel -> %s\n", spec.base_classes.size(),
                        spec.novel_classes.size(), split_args.out.c_str());
        } else if (train->parsed()) {
            config::RunConfig cfg = config::load_config(train_config);
            train_ov.apply(cfg, train);
            const auto out = cli::cmd_train(cfg, train_out, train_resume);
            std::printf("train: %d steps over %d epochs, final loss %.6f -> %s\n",
                        out.result.steps, out.result.epochs_run,
                        out.result.step_totals.empty() ? 0.0 : out.result.step_totals.back(),
                        out.checkpoint_path.c_str());
        } else if (evalc->parsed()) {
            config::RunConfig cfg = config::load_config(eval_config);
            eval_ov.apply(cfg, evalc);
            const auto out = cli::cmd_eval(cfg, eval_ckpt, eval_dets);
            std::fputs(out.report_text.c_str(), stdout);
        } else if (detect->parsed()) {
            config::RunConfig cfg = config::load_config(det_config);
            det_ov.apply(cfg, detect);
            const auto dets = cli::cmd_detect(cfg, det_ckpt, det_args);
            std::printf("detect: %zu rows -> %s\n", dets.size(), det_args.out_path.c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

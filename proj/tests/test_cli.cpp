// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "openmixer/cli.hpp"

using namespace openmixer;
namespace fs = std::filesystem;

namespace {

// Shared scratch tree; regenerated per binary run.
struct Workspace {
    fs::path root;

    Workspace() {
        root = fs::temp_directory_path() / "om_cli_test";
        fs::remove_all(root);
        fs::create_directories(root);
    }

    std::string p(const std::string& rel) const { return (root / rel).string(); }
};

const Workspace& ws() {
    static Workspace w;
    return w;
}

cli::SynthArgs synth_args() {
    cli::SynthArgs a;
    a.out_dir = ws().p("data");
    a.classes = 2;
    a.clips_per_class = 2;
    a.frames = 6;
    a.train_fraction = 0.5;
    a.seed = 71;
    return a;
}

config::RunConfig tiny_config() {
    config::RunConfig cfg;
    cfg.dataset.annotations = ws().p("data/annotations.txt");
    cfg.dataset.clips_dir = ws().p("data/clips");
    cfg.dataset.prompts = ws().p("data/prompts.json");
    cfg.dataset.split = ws().p("data/split.txt");
    cfg.backend.patch_size = 8;
    cfg.backend.feature_dim = 16;
    cfg.pyramid.dp = 8;
    cfg.head.num_queries = 8;
    cfg.head.num_stages = 2;
    cfg.head.query_dim = 16;
    cfg.head.heads = 2;
    cfg.head.qv_points = 4;
    cfg.train.frames = 4;
    cfg.train.epochs = 1;
    cfg.train.batch_size = 2;
    cfg.eval.person_threshold = 0.5;
    cfg.seed = 13;
    return cfg;
}

// One-time fixture: synthetic data on disk plus a split file.
void ensure_dataset() {
    static bool done = false;
    if (done) return;
    cli::cmd_synth(synth_args());
    cli::SplitArgs sa;
    sa.annotations = ws().p("data/annotations.txt");
    sa.out = ws().p("data/split.txt");
    sa.ratio = 0.5;
    sa.seed = 3;
    sa.dataset_name = "synthetic";
    cli::cmd_split(sa);
    done = true;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

TEST_CASE("cmd_synth: writes a loadable dataset tree") {
    ensure_dataset();
    CHECK(fs::exists(ws().p("data/annotations.txt")));
    CHECK(fs::exists(ws().p("data/prompts.json")));

    const auto bundle = cli::load_dataset(
        {ws().p("data/annotations.txt"), ws().p("data/clips"), ws().p("data/prompts.json"),
         ws().p("data/split.txt")});
    CHECK(bundle.records.size() == 4);  // 2 classes x 2 clips
    CHECK(bundle.clips.size() == 4);
    CHECK(bundle.frame_rate == 8.0);
    CHECK(bundle.prompts.size() == 2);
    CHECK(bundle.split.base_classes.size() == 1);
    CHECK(bundle.split.novel_classes.size() == 1);
    CHECK(bundle.tagged("train").size() == 2);
    CHECK(bundle.tagged("test").size() == 2);
    for (const auto& [id, frames] : bundle.clips) {
        CHECK(frames.dim(0) == 6);
        CHECK(frames.dim(1) == 64);
        CHECK(frames.dim(2) == 64);
    }
}

TEST_CASE("cmd_synth: byte-identical regeneration under the same seed") {
    ensure_dataset();
    cli::SynthArgs again = synth_args();
    again.out_dir = ws().p("data_again");
    cli::cmd_synth(again);
    CHECK(slurp(ws().p("data/annotations.txt")) == slurp(ws().p("data_again/annotations.txt")));
    CHECK(slurp(ws().p("data/prompts.json")) == slurp(ws().p("data_again/prompts.json")));
    const auto a = cli::class_names_of(data::load_annotations(ws().p("data/annotations.txt")));
    for (const auto& name : a) {
        const std::string rel = "clips/" + name + "_c0.omv";
        if (fs::exists(ws().p("data/" + rel)))
            CHECK(slurp(ws().p("data/" + rel)) == slurp(ws().p("data_again/" + rel)));
    }
}

TEST_CASE("cmd_split: floors the base count and validates the ratio") {
    ensure_dataset();
    const auto spec = data::load_split(ws().p("data/split.txt"));
    spec.validate();
    CHECK(spec.base_classes.size() == 1);
    CHECK(spec.novel_classes.size() == 1);

    cli::SplitArgs bad;
    bad.annotations = ws().p("data/annotations.txt");
    bad.ratio = 0.6;
    CHECK_THROWS_AS(cli::cmd_split(bad), InputError);

    cli::SplitArgs again;
    again.annotations = ws().p("data/annotations.txt");
    again.ratio = 0.5;
    again.seed = 3;
    again.dataset_name = "synthetic";
    const auto spec2 = cli::cmd_split(again);  // no out path: dry run
    CHECK(spec2.base_classes == spec.base_classes);
    CHECK(spec2.novel_classes == spec.novel_classes);
}

TEST_CASE("cmd_train: produces checkpoints and a log; cmd_eval scores them") {
    ensure_dataset();
    const config::RunConfig cfg = tiny_config();
    const auto out = cli::cmd_train(cfg, ws().p("run"));
    CHECK(out.result.steps == 1);  // one base class, one train record
    CHECK(out.result.novel_reads == 0);
    CHECK(fs::exists(out.checkpoint_path));
    CHECK(fs::exists(ws().p("run/checkpoint_epoch1.bin")));
    CHECK(fs::exists(ws().p("run/train_log.jsonl")));
    CHECK_FALSE(slurp(ws().p("run/train_log.jsonl")).empty());

    const auto metrics = cli::cmd_eval(cfg, out.checkpoint_path);
    CHECK(metrics.video.mean_ap >= 0.0);
    CHECK(metrics.video.mean_ap <= 1.0);
    CHECK(metrics.frame.mean_ap >= 0.0);
    CHECK(metrics.report_text.find("video_map") != std::string::npos);
    CHECK(metrics.report_text.find("frame_map") != std::string::npos);
}

TEST_CASE("cmd_eval: ground truth as detections scores a perfect map") {
    ensure_dataset();
    const config::RunConfig cfg = tiny_config();
    const auto bundle = cli::load_dataset(cfg.dataset);
    const auto vocab = train::full_vocabulary(bundle.split, bundle.prompts, cfg.backend);

    std::vector<data::AnnotationRecord> test_records;
    for (const auto* r : bundle.tagged("test")) test_records.push_back(*r);
    std::vector<Detection> rows;
    for (const auto& t : data::to_gt_tubes(test_records, vocab.names()))
        for (const auto& [f, box] : t.frames)
            rows.push_back({t.video_id, f, t.class_index, 1.0, box});
    const std::string path = ws().p("gt_dets.txt");
    data::save_detections(path, rows, vocab.names());

    const auto metrics = cli::cmd_eval(cfg, "", path);
    CHECK(metrics.video.mean_ap == 1.0);
    CHECK(metrics.frame.mean_ap == 1.0);
    CHECK(metrics.video.has_base);
    CHECK(metrics.video.has_novel);
    CHECK(metrics.video.base_ap == 1.0);
    CHECK(metrics.video.novel_ap == 1.0);
}

TEST_CASE("cmd_eval: protocol and input failure modes") {
    ensure_dataset();
    config::RunConfig cfg = tiny_config();
    CHECK_THROWS_AS(cli::cmd_eval(cfg, "", ws().p("missing_dets.txt")), InputError);
    CHECK_THROWS_AS(cli::cmd_eval(cfg, ""), InputError);  // neither checkpoint nor file

    config::RunConfig no_novel = cfg;
    no_novel.eval.protocol = eval::ProtocolMode::novel_only;
    // Rewrite the split with every class in base: novel protocol cannot apply.
    data::SplitSpec all_base;
    all_base.dataset = "synthetic";
    all_base.base_classes =
        cli::class_names_of(data::load_annotations(cfg.dataset.annotations));
    no_novel.dataset.split = ws().p("all_base_split.txt");
    data::save_split(no_novel.dataset.split, all_base);
    CHECK_THROWS_AS(cli::cmd_eval(no_novel, "", ws().p("gt_dets.txt")), ConfigError);
}

TEST_CASE("cmd_detect: deterministic rows, captions match file scores, renders load") {
    ensure_dataset();
    const config::RunConfig cfg = tiny_config();
    const std::string ckpt_path = ws().p("run/checkpoint.bin");
    REQUIRE(fs::exists(ckpt_path));  // produced by the train test above

    const auto bundle = cli::load_dataset(cfg.dataset);
    const auto vocab = train::full_vocabulary(bundle.split, bundle.prompts, cfg.backend);
    const std::string video = bundle.tagged("test").front()->video_id;

    cli::DetectArgs da;
    da.video_id = video;
    da.out_path = ws().p("dets_a.txt");
    da.render_dir = ws().p("render");
    const auto dets = cli::cmd_detect(cfg, ckpt_path, da);

    cli::DetectArgs db = da;
    db.out_path = ws().p("dets_b.txt");
    db.render_dir.clear();
    cli::cmd_detect(cfg, ckpt_path, db);
    CHECK(slurp(da.out_path) == slurp(db.out_path));

    // Scores survive the file round-trip, so captions agree with the file.
    const auto loaded = data::load_detections(da.out_path, vocab.names());
    REQUIRE(loaded.size() == dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) {
        const auto& name = vocab.classes[static_cast<std::size_t>(dets[i].class_index)].name;
        CHECK(viz::caption_text(name, dets[i].score) ==
              viz::caption_text(name, loaded[i].score));
    }

    int rendered = 0;
    for (const auto& e : fs::directory_iterator(da.render_dir)) {
        const viz::Image im = viz::load_ppm(e.path().string());
        CHECK(im.width == 64);
        CHECK(im.height == 64);
        ++rendered;
    }
    CHECK(rendered == 6);  // every frame of the one requested video

    cli::DetectArgs unknown;
    unknown.video_id = "no_such_video";
    unknown.out_path = ws().p("dets_c.txt");
    CHECK_THROWS_AS(cli::cmd_detect(cfg, ckpt_path, unknown), InputError);
}

TEST_CASE("load_dataset: missing pieces raise clear errors") {
    ensure_dataset();
    config::DatasetPaths paths{ws().p("data/annotations.txt"), ws().p("no_clips"),
                               ws().p("data/prompts.json"), ws().p("data/split.txt")};
    CHECK_THROWS_AS(cli::load_dataset(paths), InputError);          // empty clip dir
    CHECK_THROWS_AS(cli::load_dataset({}), ConfigError);            // nothing set
    paths.clips_dir = ws().p("data/clips");
    paths.annotations = ws().p("data/absent.txt");
    CHECK_THROWS_AS(cli::load_dataset(paths), InputError);
}

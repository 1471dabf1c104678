// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>
#include <vector>

#include "openmixer/common.hpp"
#include "openmixer/eval.hpp"
#include "support/oracles.hpp"

using namespace openmixer;
namespace ev = openmixer::eval;

namespace {

ev::DetectionTube make_tube(const std::string& video, int cls, int start, int len, Rect box,
                            double score) {
    ev::DetectionTube t;
    t.video_id = video;
    t.class_index = cls;
    for (int i = 0; i < len; ++i) t.frames.push_back(ev::TubeFrame{start + i, box, score});
    t.finalize_score();
    return t;
}

ev::GroundTruthTube make_gt(const std::string& video, int cls, int start, int len, Rect box) {
    ev::GroundTruthTube t;
    t.video_id = video;
    t.class_index = cls;
    for (int i = 0; i < len; ++i) t.frames.emplace_back(start + i, box);
    return t;
}

Rect random_rect(Rng& rng) {
    const double cx = 0.2 + 0.6 * rng.uniform();
    const double cy = 0.2 + 0.6 * rng.uniform();
    const double w = 0.1 + 0.2 * rng.uniform();
    const double h = 0.1 + 0.2 * rng.uniform();
    return Rect{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

Rect jitter_rect(const Rect& r, Rng& rng, double amp) {
    auto j = [&] { return amp * (2.0 * rng.uniform() - 1.0); };
    return Rect{r.x1 + j(), r.y1 + j(), r.x2 + j(), r.y2 + j()};
}

struct EvalInstance {
    std::vector<ev::DetectionTube> dets;
    std::vector<ev::GroundTruthTube> gts;
    std::vector<bool> is_novel;
    ev::EvalProtocol protocol;
};

EvalInstance random_instance(Rng& rng, int trial) {
    EvalInstance inst;
    const int num_classes = 2 + rng.uniform_int(3);
    inst.is_novel.resize(static_cast<std::size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c) inst.is_novel[static_cast<std::size_t>(c)] = rng.uniform() < 0.5;

    for (int c = 0; c < num_classes; ++c) {
        const int num_gt = rng.uniform_int(4);
        for (int g = 0; g < num_gt; ++g) {
            const std::string video = "v" + std::to_string(rng.uniform_int(3));
            const int start = rng.uniform_int(9);
            const int len = 3 + rng.uniform_int(6);
            const Rect base = random_rect(rng);
            ev::GroundTruthTube gt;
            gt.video_id = video;
            gt.class_index = c;
            for (int i = 0; i < len; ++i)
                gt.frames.emplace_back(start + i, jitter_rect(base, rng, 0.01));
            inst.gts.push_back(gt);

            const int copies = rng.uniform() < 0.75 ? 1 + (rng.uniform() < 0.4 ? 1 : 0) : 0;
            for (int k = 0; k < copies; ++k) {
                ev::DetectionTube d;
                d.video_id = video;
                d.class_index = c;
                const int shift = static_cast<int>(rng.uniform_int(5)) - 2;
                const int dlen = std::max(1, len + static_cast<int>(rng.uniform_int(5)) - 2);
                for (int i = 0; i < dlen; ++i) {
                    const int f = std::max(0, start + shift + i);
                    d.frames.push_back(
                        ev::TubeFrame{f, jitter_rect(base, rng, 0.04), 0.05 + 0.9 * rng.uniform()});
                }
                for (std::size_t i = 1; i < d.frames.size(); ++i)
                    d.frames[i].frame_index = d.frames[i - 1].frame_index + 1;
                d.finalize_score();
                inst.dets.push_back(d);
            }
        }
        const int distractors = rng.uniform_int(3);
        for (int k = 0; k < distractors; ++k) {
            inst.dets.push_back(make_tube("v" + std::to_string(rng.uniform_int(3)), c,
                                          rng.uniform_int(10), 2 + rng.uniform_int(5),
                                          random_rect(rng), 0.05 + 0.9 * rng.uniform()));
        }
    }
    inst.protocol.mode = trial % 3 == 0   ? ev::ProtocolMode::generalized
                         : trial % 3 == 1 ? ev::ProtocolMode::base_only
                                          : ev::ProtocolMode::novel_only;
    inst.protocol.iou_threshold = trial % 2 == 0 ? 0.5 : 0.2;
    inst.protocol.temporal_only = trial % 4 == 3;
    return inst;
}

void check_reports_equal(const ev::MetricsReport& a, const ev::MetricsReport& b) {
    CHECK(a.mean_ap == doctest::Approx(b.mean_ap).epsilon(1e-12));
    CHECK(a.base_ap == doctest::Approx(b.base_ap).epsilon(1e-12));
    CHECK(a.novel_ap == doctest::Approx(b.novel_ap).epsilon(1e-12));
    CHECK(a.has_base == b.has_base);
    CHECK(a.has_novel == b.has_novel);
    REQUIRE(a.per_class.size() == b.per_class.size());
    for (std::size_t i = 0; i < a.per_class.size(); ++i) {
        CHECK(a.per_class[i].class_index == b.per_class[i].class_index);
        CHECK(a.per_class[i].ap == doctest::Approx(b.per_class[i].ap).epsilon(1e-12));
        CHECK(a.per_class[i].num_gt == b.per_class[i].num_gt);
        CHECK(a.per_class[i].vacuous == b.per_class[i].vacuous);
    }
}

}  // namespace

TEST_CASE("tube 3d iou: half-overlapping tubes with identical boxes score one third") {
    const Rect box{0.2, 0.2, 0.6, 0.6};
    const auto a = make_tube("v", 0, 1, 10, box, 0.9);  // frames 1..10
    const auto b = make_gt("v", 0, 6, 10, box);         // frames 6..15
    CHECK(ev::tube_3d_iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(ev::tube_3d_iou(a, b, true) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("tube 3d iou: identical tubes score exactly one") {
    const Rect box{0.1, 0.3, 0.5, 0.8};
    const auto a = make_tube("v", 0, 4, 7, box, 0.5);
    const auto b = make_gt("v", 0, 4, 7, box);
    CHECK(ev::tube_3d_iou(a, b) == 1.0);
}

TEST_CASE("tube 3d iou: temporally disjoint tubes score zero") {
    const Rect box{0.1, 0.1, 0.4, 0.4};
    const auto a = make_tube("v", 0, 0, 5, box, 0.5);
    const auto b = make_gt("v", 0, 10, 5, box);
    CHECK(ev::tube_3d_iou(a, b) == 0.0);
    CHECK(ev::tube_3d_iou(a, b, true) == 0.0);
}

TEST_CASE("tube 3d iou: temporal-only flag ignores spatial drift") {
    const auto a = make_tube("v", 0, 0, 10, Rect{0.0, 0.0, 0.2, 0.2}, 0.5);
    const auto b = make_gt("v", 0, 0, 10, Rect{0.7, 0.7, 0.9, 0.9});
    CHECK(ev::tube_3d_iou(a, b) == 0.0);
    CHECK(ev::tube_3d_iou(a, b, true) == 1.0);
}

TEST_CASE("average precision: stated two-detection hand cases") {
    // one ground truth; true positive ranked first
    CHECK(ev::average_precision({{0.9, true}, {0.8, false}}, 1) == doctest::Approx(1.0));
    // one ground truth; false positive ranked first
    CHECK(ev::average_precision({{0.9, false}, {0.8, true}}, 1) == doctest::Approx(0.5));
    CHECK(ev::average_precision({}, 3) == 0.0);
    CHECK(ev::average_precision({{0.9, false}}, 0) == 0.0);
    CHECK_THROWS_AS(ev::average_precision({}, -1), InputError);
}

TEST_CASE("average precision: envelope carries later precision back to earlier recall") {
    // precisions 0, 1/2, 2/3; the envelope lifts both true positives to 2/3
    CHECK(ev::average_precision({{0.9, false}, {0.8, true}, {0.7, true}}, 2) ==
          doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    // precisions 1, 1/2, 2/3; first stays at 1, second lifts to 2/3
    CHECK(ev::average_precision({{0.9, true}, {0.8, false}, {0.7, true}}, 2) ==
          doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    CHECK(omtest::slow_average_precision({{0.9, false}, {0.8, true}, {0.7, true}}, 2) ==
          doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("link tubes: contiguous overlapping detections form one tube") {
    std::vector<Detection> dets = {
        {"a", 0, 0, 0.8, Rect{0.1, 0.1, 0.3, 0.3}},
        {"a", 1, 0, 0.6, Rect{0.12, 0.1, 0.32, 0.3}},
    };
    auto tubes = ev::link_tubes(dets);
    REQUIRE(tubes.size() == 1);
    CHECK(tubes[0].frames.size() == 2);
    CHECK(tubes[0].frames[0].frame_index == 0);
    CHECK(tubes[0].frames[1].frame_index == 1);
    CHECK(tubes[0].tube_score == doctest::Approx(0.7));
}

TEST_CASE("link tubes: a frame gap terminates the active tube") {
    std::vector<Detection> dets = {
        {"a", 0, 0, 0.8, Rect{0.1, 0.1, 0.3, 0.3}},
        {"a", 2, 0, 0.6, Rect{0.1, 0.1, 0.3, 0.3}},
    };
    auto tubes = ev::link_tubes(dets);
    REQUIRE(tubes.size() == 2);
    for (const auto& t : tubes) {
        CHECK(t.frames.size() == 1);
        t.validate();
    }
}

TEST_CASE("link tubes: overlap below the continuity floor starts a new tube") {
    std::vector<Detection> dets = {
        {"a", 0, 0, 0.8, Rect{0.1, 0.1, 0.3, 0.3}},
        {"a", 1, 0, 0.6, Rect{0.6, 0.6, 0.9, 0.9}},
    };
    auto tubes = ev::link_tubes(dets, 0.1);
    CHECK(tubes.size() == 2);
}

TEST_CASE("link tubes: parallel actors stay in separate tubes") {
    std::vector<Detection> dets = {
        {"a", 0, 0, 0.9, Rect{0.0, 0.0, 0.2, 0.2}},
        {"a", 0, 0, 0.8, Rect{0.5, 0.5, 0.7, 0.7}},
        {"a", 1, 0, 0.5, Rect{0.01, 0.0, 0.21, 0.2}},
        {"a", 1, 0, 0.7, Rect{0.51, 0.5, 0.71, 0.7}},
    };
    auto tubes = ev::link_tubes(dets);
    REQUIRE(tubes.size() == 2);
    for (const auto& t : tubes) {
        REQUIRE(t.frames.size() == 2);
        // each tube's tail stays near its own head
        CHECK(rect_iou(t.frames[0].box, t.frames[1].box) > 0.5);
    }
}

TEST_CASE("link tubes: contested detection goes to the earlier tube") {
    // two active tubes, one detection next frame overlapping both
    std::vector<Detection> dets = {
        {"a", 0, 0, 0.9, Rect{0.10, 0.1, 0.30, 0.3}},
        {"a", 0, 0, 0.8, Rect{0.14, 0.1, 0.34, 0.3}},
        {"a", 1, 0, 0.5, Rect{0.12, 0.1, 0.32, 0.3}},
    };
    auto tubes = ev::link_tubes(dets);
    REQUIRE(tubes.size() == 2);
    bool extended_first = false;
    for (const auto& t : tubes)
        if (t.frames.size() == 2) {
            // creation order follows score order, so 0.9 seeds the first tube
            CHECK(t.frames[0].score == doctest::Approx(0.9));
            extended_first = true;
        }
    CHECK(extended_first);
}

TEST_CASE("video map: perfect detection scores one, confident misses halve it") {
    const Rect box{0.2, 0.2, 0.6, 0.6};
    std::vector<ev::GroundTruthTube> gts = {make_gt("v", 0, 0, 8, box)};
    std::vector<bool> is_novel = {false};
    ev::EvalProtocol protocol;

    std::vector<ev::DetectionTube> dets = {make_tube("v", 0, 0, 8, box, 0.9)};
    CHECK(ev::video_map(dets, gts, protocol, is_novel).mean_ap == doctest::Approx(1.0));

    // a lower-scored false positive ranks behind the hit: AP stays 1
    dets.push_back(make_tube("v", 0, 0, 8, Rect{0.7, 0.7, 0.9, 0.9}, 0.4));
    CHECK(ev::video_map(dets, gts, protocol, is_novel).mean_ap == doctest::Approx(1.0));

    // a higher-scored false positive outranks it: AP drops to 1/2
    dets.push_back(make_tube("v", 0, 0, 8, Rect{0.0, 0.7, 0.2, 0.9}, 0.95));
    CHECK(ev::video_map(dets, gts, protocol, is_novel).mean_ap == doctest::Approx(0.5));
}

TEST_CASE("video map: same boxes in another video never match") {
    const Rect box{0.2, 0.2, 0.6, 0.6};
    std::vector<ev::GroundTruthTube> gts = {make_gt("v0", 0, 0, 8, box)};
    std::vector<ev::DetectionTube> dets = {make_tube("v1", 0, 0, 8, box, 0.9)};
    std::vector<bool> is_novel = {false};
    CHECK(ev::video_map(dets, gts, ev::EvalProtocol{}, is_novel).mean_ap == 0.0);
}

TEST_CASE("video map: one ground truth is claimed by the higher-ranked tube only") {
    const Rect box{0.2, 0.2, 0.6, 0.6};
    std::vector<ev::GroundTruthTube> gts = {make_gt("v", 0, 0, 8, box)};
    std::vector<ev::DetectionTube> dets = {make_tube("v", 0, 0, 8, box, 0.9),
                                           make_tube("v", 0, 0, 8, box, 0.7)};
    std::vector<bool> is_novel = {false};
    const auto rep = ev::video_map(dets, gts, ev::EvalProtocol{}, is_novel);
    CHECK(rep.mean_ap == doctest::Approx(1.0));  // duplicate is a trailing FP
}

TEST_CASE("video map: vacuous classes are skipped, empty-gt classes score zero") {
    const Rect box{0.2, 0.2, 0.6, 0.6};
    std::vector<ev::GroundTruthTube> gts = {make_gt("v", 0, 0, 8, box)};
    std::vector<ev::DetectionTube> dets = {make_tube("v", 0, 0, 8, box, 0.9),
                                           make_tube("v", 2, 0, 8, box, 0.9)};
    std::vector<bool> is_novel = {false, false, true};
    const auto rep = ev::video_map(dets, gts, ev::EvalProtocol{}, is_novel);
    REQUIRE(rep.per_class.size() == 3);
    CHECK(rep.per_class[0].ap == doctest::Approx(1.0));
    CHECK(rep.per_class[1].vacuous);        // class 1: nothing at all
    CHECK(rep.per_class[2].ap == 0.0);      // class 2: detections, no ground truth
    CHECK_FALSE(rep.per_class[2].vacuous);
    CHECK(rep.mean_ap == doctest::Approx(0.5));
    CHECK(rep.base_ap == doctest::Approx(1.0));
    CHECK(rep.novel_ap == doctest::Approx(0.0));
}

TEST_CASE("video map: protocol mode restricts the evaluated classes") {
    const Rect box{0.2, 0.2, 0.6, 0.6};
    std::vector<ev::GroundTruthTube> gts = {make_gt("v", 0, 0, 8, box), make_gt("v", 1, 0, 8, box)};
    std::vector<ev::DetectionTube> dets = {make_tube("v", 0, 0, 8, box, 0.9)};
    std::vector<bool> is_novel = {false, true};

    ev::EvalProtocol p;
    p.mode = ev::ProtocolMode::base_only;
    auto rep = ev::video_map(dets, gts, p, is_novel);
    REQUIRE(rep.per_class.size() == 1);
    CHECK(rep.mean_ap == doctest::Approx(1.0));
    CHECK_FALSE(rep.has_novel);

    p.mode = ev::ProtocolMode::novel_only;
    rep = ev::video_map(dets, gts, p, is_novel);
    REQUIRE(rep.per_class.size() == 1);
    CHECK(rep.mean_ap == 0.0);
    CHECK_FALSE(rep.has_base);

    p.mode = ev::ProtocolMode::generalized;
    rep = ev::video_map(dets, gts, p, is_novel);
    CHECK(rep.mean_ap == doctest::Approx(0.5));
    CHECK(rep.has_base);
    CHECK(rep.has_novel);
}

TEST_CASE("video map: rejects classes outside the vocabulary") {
    const Rect box{0.2, 0.2, 0.6, 0.6};
    std::vector<bool> is_novel = {false};
    CHECK_THROWS_AS(ev::video_map({make_tube("v", 1, 0, 4, box, 0.5)}, {}, ev::EvalProtocol{}, is_novel),
                    InputError);
    CHECK_THROWS_AS(ev::video_map({}, {make_gt("v", 1, 0, 4, box)}, ev::EvalProtocol{}, is_novel),
                    InputError);
}

TEST_CASE("video map: metrics are invariant to input ordering") {
    Rng rng(2026);
    for (int trial = 0; trial < 40; ++trial) {
        auto inst = random_instance(rng, trial);
        const auto rep = ev::video_map(inst.dets, inst.gts, inst.protocol, inst.is_novel);
        auto dets = inst.dets;
        auto gts = inst.gts;
        rng.shuffle(dets);
        rng.shuffle(gts);
        const auto rep2 = ev::video_map(dets, gts, inst.protocol, inst.is_novel);
        check_reports_equal(rep, rep2);
    }
}

TEST_CASE("video map: appending zero-score duplicates leaves metrics unchanged") {
    // one actor per video, so a duplicate can never claim a second ground truth
    Rng rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<ev::GroundTruthTube> gts;
        std::vector<ev::DetectionTube> dets;
        std::vector<bool> is_novel = {false, true};
        for (int v = 0; v < 4; ++v) {
            const std::string video = "v" + std::to_string(v);
            const int cls = rng.uniform_int(2);
            const Rect base = random_rect(rng);
            gts.push_back(make_gt(video, cls, rng.uniform_int(5), 4 + rng.uniform_int(4), base));
            ev::DetectionTube d;
            d.video_id = video;
            d.class_index = cls;
            const auto& g = gts.back();
            for (const auto& [f, b] : g.frames)
                d.frames.push_back(ev::TubeFrame{f, jitter_rect(b, rng, 0.03), 0.1 + 0.8 * rng.uniform()});
            d.finalize_score();
            dets.push_back(d);
        }
        ev::EvalProtocol protocol;
        protocol.iou_threshold = 0.2 + 0.3 * (trial % 2);
        const auto rep = ev::video_map(dets, gts, protocol, is_novel);
        auto padded = dets;
        for (auto d : dets) {
            for (auto& f : d.frames) f.score = 0.0;
            d.finalize_score();
            padded.push_back(d);
        }
        const auto rep2 = ev::video_map(padded, gts, protocol, is_novel);
        check_reports_equal(rep, rep2);
    }
}

TEST_CASE("video map: matches the exhaustive reference on random instances") {
    Rng rng(99);
    for (int trial = 0; trial < 120; ++trial) {
        auto inst = random_instance(rng, trial);
        const auto fast = ev::video_map(inst.dets, inst.gts, inst.protocol, inst.is_novel);
        const auto slow = omtest::slow_video_map(inst.dets, inst.gts, inst.protocol, inst.is_novel);
        check_reports_equal(fast, slow);
    }
}

TEST_CASE("frame map: perfect per-frame boxes score one; protocol filters classes") {
    const Rect box{0.2, 0.2, 0.6, 0.6};
    std::vector<ev::GroundTruthTube> gts = {make_gt("a", 0, 0, 2, box), make_gt("a", 1, 3, 2, box)};
    std::vector<Detection> dets;
    for (int f = 0; f < 2; ++f) dets.push_back({"a", f, 0, 0.9, box});
    std::vector<bool> is_novel = {false, true};

    ev::EvalProtocol p;
    auto rep = ev::frame_map(dets, gts, p, is_novel);
    CHECK(rep.mean_ap == doctest::Approx(0.5));
    CHECK(rep.base_ap == doctest::Approx(1.0));
    CHECK(rep.novel_ap == 0.0);

    p.mode = ev::ProtocolMode::base_only;
    rep = ev::frame_map(dets, gts, p, is_novel);
    CHECK(rep.mean_ap == doctest::Approx(1.0));
}

TEST_CASE("frame map: wrong-frame detections never match") {
    const Rect box{0.2, 0.2, 0.6, 0.6};
    std::vector<ev::GroundTruthTube> gts = {make_gt("a", 0, 0, 1, box)};
    std::vector<Detection> dets = {{"a", 5, 0, 0.9, box}};
    std::vector<bool> is_novel = {false};
    CHECK(ev::frame_map(dets, gts, ev::EvalProtocol{}, is_novel).mean_ap == 0.0);
}

TEST_CASE("linking feeds scoring: per-frame boxes from two actors round-trip to full marks") {
    std::vector<ev::GroundTruthTube> gts = {
        make_gt("a", 0, 0, 6, Rect{0.1, 0.1, 0.3, 0.3}),
        make_gt("a", 1, 2, 6, Rect{0.6, 0.6, 0.8, 0.8}),
    };
    std::vector<Detection> dets;
    for (const auto& g : gts)
        for (const auto& [f, b] : g.frames)
            dets.push_back({g.video_id, f, g.class_index, 0.9, b});
    auto tubes = ev::link_tubes(dets);
    REQUIRE(tubes.size() == 2);
    std::vector<bool> is_novel = {false, true};
    const auto rep = ev::video_map(tubes, gts, ev::EvalProtocol{}, is_novel);
    CHECK(rep.mean_ap == doctest::Approx(1.0));
    CHECK(rep.base_ap == doctest::Approx(1.0));
    CHECK(rep.novel_ap == doctest::Approx(1.0));
}

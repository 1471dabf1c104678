// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "openmixer/types.hpp"

namespace openmixer::eval {

struct TubeFrame {
    int frame_index = 0;
    Rect box;
    double score = 0.0;
};

// A temporally contiguous per-frame box sequence for one actor and class.
struct DetectionTube {
    std::string video_id;
    int class_index = 0;
    std::vector<TubeFrame> frames;
    double tube_score = 0.0;  // mean of frame scores

    void finalize_score() {
        double s = 0.0;
        for (const auto& f : frames) s += f.score;
        tube_score = frames.empty() ? 0.0 : s / static_cast<double>(frames.size());
    }

    void validate() const {
        for (std::size_t i = 1; i < frames.size(); ++i)
            if (frames[i].frame_index != frames[i - 1].frame_index + 1)
                throw ValidationError("DetectionTube: frames not contiguous");
    }
};

struct GroundTruthTube {
    std::string video_id;
    int class_index = 0;
    std::vector<std::pair<int, Rect>> frames;  // (frame_index, box), sorted
};

enum class ProtocolMode { base_only, novel_only, generalized };

struct EvalProtocol {
    ProtocolMode mode = ProtocolMode::generalized;
    double iou_threshold = 0.5;    // 3D IoU for video mAP (0.2 for UCF101-24 style data)
    double person_threshold = 0.6; // applied to detections before linking
    double frame_iou_threshold = 0.5;
    double continuity_iou = 0.1;   // linking constraint
    bool temporal_only = false;    // score tubes by temporal IoU alone
};

// Temporal IoU of the frame-index intervals times the mean spatial IoU over
// the temporal intersection. Zero when temporally disjoint.
inline double tube_3d_iou(const std::vector<TubeFrame>& a,
                          const std::vector<std::pair<int, Rect>>& b,
                          bool temporal_only = false) {
    if (a.empty() || b.empty()) return 0.0;
    const int a0 = a.front().frame_index, a1 = a.back().frame_index;
    const int b0 = b.front().first, b1 = b.back().first;
    const int i0 = std::max(a0, b0), i1 = std::min(a1, b1);
    if (i0 > i1) return 0.0;
    const int inter = i1 - i0 + 1;
    const int uni = (a1 - a0 + 1) + (b1 - b0 + 1) - inter;
    const double t_iou = static_cast<double>(inter) / static_cast<double>(uni);
    if (temporal_only) return t_iou;
    double s = 0.0;
    for (int f = i0; f <= i1; ++f) {
        const Rect& ra = a[static_cast<std::size_t>(f - a0)].box;
        const Rect& rb = b[static_cast<std::size_t>(f - b0)].second;
        s += rect_iou(ra, rb);
    }
    return t_iou * (s / inter);
}

inline double tube_3d_iou(const DetectionTube& a, const GroundTruthTube& b,
                          bool temporal_only = false) {
    return tube_3d_iou(a.frames, b.frames, temporal_only);
}

// Greedy online tube linking. Detections must already be person-thresholded.
// Per video and class, frame by frame: each active tube (in creation order)
// takes the unassigned detection maximizing score + spatial IoU with the tube
// tail, subject to IoU >= continuity_iou; leftovers start new tubes; a tube
// that finds nothing terminates (frames stay contiguous).
inline std::vector<DetectionTube> link_tubes(const std::vector<Detection>& detections,
                                             double continuity_iou = 0.1) {
    // (video, class) -> frame -> boxes, with a deterministic in-frame order
    std::map<std::pair<std::string, int>, std::map<int, std::vector<Detection>>> grouped;
    for (const auto& d : detections)
        grouped[{d.video_id, d.class_index}][d.frame_index].push_back(d);

    std::vector<DetectionTube> out;
    for (auto& [key, by_frame] : grouped) {
        for (auto& [frame, dets] : by_frame) {
            std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
                if (a.score != b.score) return a.score > b.score;
                return std::tie(a.box.x1, a.box.y1, a.box.x2, a.box.y2) <
                       std::tie(b.box.x1, b.box.y1, b.box.x2, b.box.y2);
            });
        }
        std::vector<DetectionTube> active;
        for (auto& [frame, dets] : by_frame) {
            std::vector<char> taken(dets.size(), 0);
            std::vector<DetectionTube> still_active;
            for (auto& tube : active) {
                if (tube.frames.back().frame_index != frame - 1) {
                    out.push_back(tube);  // gap in the detection stream: terminate
                    continue;
                }
                const Rect& tail = tube.frames.back().box;
                int best = -1;
                double best_val = -1.0;
                for (std::size_t i = 0; i < dets.size(); ++i) {
                    if (taken[i]) continue;
                    const double iou = rect_iou(tail, dets[i].box);
                    if (iou < continuity_iou) continue;
                    const double val = dets[i].score + iou;
                    // ties fall to the earlier (higher-score) detection
                    if (val > best_val + 1e-12) {
                        best_val = val;
                        best = static_cast<int>(i);
                    }
                }
                if (best < 0) {
                    out.push_back(tube);
                    continue;
                }
                taken[static_cast<std::size_t>(best)] = 1;
                tube.frames.push_back(TubeFrame{frame, dets[static_cast<std::size_t>(best)].box,
                                                dets[static_cast<std::size_t>(best)].score});
                still_active.push_back(std::move(tube));
            }
            for (std::size_t i = 0; i < dets.size(); ++i) {
                if (taken[i]) continue;
                DetectionTube t;
                t.video_id = key.first;
                t.class_index = key.second;
                t.frames.push_back(TubeFrame{frame, dets[i].box, dets[i].score});
                still_active.push_back(std::move(t));
            }
            active = std::move(still_active);
        }
        for (auto& tube : active) out.push_back(std::move(tube));
    }
    for (auto& t : out) {
        t.finalize_score();
        t.validate();
    }
    return out;
}

// All-point interpolated AP: area under the precision envelope of the ranked
// detection list. `ranked` must already be sorted by decreasing score.
inline double average_precision(const std::vector<std::pair<double, bool>>& ranked, int num_gt) {
    if (num_gt < 0) throw InputError("average_precision: negative num_gt");
    if (num_gt == 0) return 0.0;  // any detections on an empty class are all false
    const std::size_t n = ranked.size();
    std::vector<double> precision(n);
    std::vector<int> tp_count(n);
    int tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (ranked[i].second) ++tp;
        tp_count[i] = tp;
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    }
    // envelope: max precision over this point and everything ranked below
    for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double ap = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (ranked[i].second) ap += precision[i];
    return ap / static_cast<double>(num_gt);
}

struct ClassMetric {
    int class_index = 0;
    double ap = 0.0;
    int num_gt = 0;
    int num_detections = 0;
    bool vacuous = false;  // no ground truth and no detections: skipped from means
};

struct MetricsReport {
    std::vector<ClassMetric> per_class;
    double mean_ap = 0.0;
    double base_ap = 0.0;
    double novel_ap = 0.0;
    bool has_base = false;
    bool has_novel = false;
};

namespace detail {

// Content-based total order on tubes so ranking never depends on input order.
inline bool tube_rank_less(const DetectionTube& a, const DetectionTube& b) {
    if (a.tube_score != b.tube_score) return a.tube_score > b.tube_score;
    if (a.video_id != b.video_id) return a.video_id < b.video_id;
    const int a0 = a.frames.empty() ? 0 : a.frames.front().frame_index;
    const int b0 = b.frames.empty() ? 0 : b.frames.front().frame_index;
    if (a0 != b0) return a0 < b0;
    if (a.frames.size() != b.frames.size()) return a.frames.size() > b.frames.size();
    for (std::size_t i = 0; i < a.frames.size(); ++i) {
        const Rect& ra = a.frames[i].box;
        const Rect& rb = b.frames[i].box;
        if (std::tie(ra.x1, ra.y1, ra.x2, ra.y2) != std::tie(rb.x1, rb.y1, rb.x2, rb.y2))
            return std::tie(ra.x1, ra.y1, ra.x2, ra.y2) < std::tie(rb.x1, rb.y1, rb.x2, rb.y2);
    }
    return false;
}

inline MetricsReport aggregate(std::vector<ClassMetric> per_class,
                               const std::vector<bool>& is_novel) {
    MetricsReport rep;
    double sum = 0.0, base_sum = 0.0, novel_sum = 0.0;
    int cnt = 0, base_cnt = 0, novel_cnt = 0;
    for (const auto& cm : per_class) {
        if (!cm.vacuous) {
            sum += cm.ap;
            ++cnt;
            if (is_novel[static_cast<std::size_t>(cm.class_index)]) {
                novel_sum += cm.ap;
                ++novel_cnt;
            } else {
                base_sum += cm.ap;
                ++base_cnt;
            }
        }
    }
    rep.per_class = std::move(per_class);
    rep.mean_ap = cnt ? sum / cnt : 0.0;
    rep.base_ap = base_cnt ? base_sum / base_cnt : 0.0;
    rep.novel_ap = novel_cnt ? novel_sum / novel_cnt : 0.0;
    rep.has_base = base_cnt > 0;
    rep.has_novel = novel_cnt > 0;
    return rep;
}

inline bool class_in_protocol(int cls, const EvalProtocol& protocol,
                              const std::vector<bool>& is_novel) {
    const bool novel = is_novel[static_cast<std::size_t>(cls)];
    switch (protocol.mode) {
        case ProtocolMode::base_only: return !novel;
        case ProtocolMode::novel_only: return novel;
        case ProtocolMode::generalized: return true;
    }
    return false;
}

}  // namespace detail

// Video-level mAP: per class, greedily match score-ranked tubes one-to-one to
// ground truth at 3D IoU >= threshold, then average-precision per class and
// Mean/Base/Novel aggregates over non-vacuous classes.
inline MetricsReport video_map(const std::vector<DetectionTube>& detected,
                               const std::vector<GroundTruthTube>& gt,
                               const EvalProtocol& protocol, const std::vector<bool>& is_novel) {
    const int num_classes = static_cast<int>(is_novel.size());
    for (const auto& t : detected)
        if (t.class_index < 0 || t.class_index >= num_classes)
            throw InputError("video_map: detection class outside vocabulary");
    for (const auto& t : gt)
        if (t.class_index < 0 || t.class_index >= num_classes)
            throw InputError("video_map: ground-truth class outside vocabulary");

    std::vector<ClassMetric> per_class;
    for (int cls = 0; cls < num_classes; ++cls) {
        if (!detail::class_in_protocol(cls, protocol, is_novel)) continue;
        std::vector<const DetectionTube*> dets;
        for (const auto& t : detected)
            if (t.class_index == cls) dets.push_back(&t);
        std::vector<const GroundTruthTube*> gts;
        for (const auto& t : gt)
            if (t.class_index == cls) gts.push_back(&t);

        ClassMetric cm;
        cm.class_index = cls;
        cm.num_gt = static_cast<int>(gts.size());
        cm.num_detections = static_cast<int>(dets.size());
        cm.vacuous = gts.empty() && dets.empty();
        if (!cm.vacuous && !gts.empty()) {
            std::sort(dets.begin(), dets.end(),
                      [](const DetectionTube* a, const DetectionTube* b) {
                          return detail::tube_rank_less(*a, *b);
                      });
            std::vector<char> gt_used(gts.size(), 0);
            std::vector<std::pair<double, bool>> ranked;
            ranked.reserve(dets.size());
            for (const DetectionTube* d : dets) {
                int best = -1;
                double best_iou = protocol.iou_threshold;
                for (std::size_t j = 0; j < gts.size(); ++j) {
                    if (gt_used[j] || gts[j]->video_id != d->video_id) continue;
                    const double iou = tube_3d_iou(*d, *gts[j], protocol.temporal_only);
                    if (iou > best_iou || (best < 0 && iou == best_iou)) {
                        best_iou = iou;
                        best = static_cast<int>(j);
                    }
                }
                if (best >= 0) gt_used[static_cast<std::size_t>(best)] = 1;
                ranked.emplace_back(d->tube_score, best >= 0);
            }
            cm.ap = average_precision(ranked, cm.num_gt);
        }
        per_class.push_back(cm);
    }
    return detail::aggregate(std::move(per_class), is_novel);
}

// Frame-level mAP over per-frame boxes, pooled across all videos and frames.
inline MetricsReport frame_map(const std::vector<Detection>& detections,
                               const std::vector<GroundTruthTube>& gt,
                               const EvalProtocol& protocol, const std::vector<bool>& is_novel) {
    const int num_classes = static_cast<int>(is_novel.size());
    struct GtBox {
        std::string video_id;
        int frame = 0;
        Rect box;
    };
    std::map<int, std::vector<GtBox>> gt_by_class;
    for (const auto& t : gt) {
        if (t.class_index < 0 || t.class_index >= num_classes)
            throw InputError("frame_map: ground-truth class outside vocabulary");
        for (const auto& [f, box] : t.frames)
            gt_by_class[t.class_index].push_back(GtBox{t.video_id, f, box});
    }
    std::vector<ClassMetric> per_class;
    for (int cls = 0; cls < num_classes; ++cls) {
        if (!detail::class_in_protocol(cls, protocol, is_novel)) continue;
        std::vector<const Detection*> dets;
        for (const auto& d : detections)
            if (d.class_index == cls) dets.push_back(&d);
        auto& gts = gt_by_class[cls];

        ClassMetric cm;
        cm.class_index = cls;
        cm.num_gt = static_cast<int>(gts.size());
        cm.num_detections = static_cast<int>(dets.size());
        cm.vacuous = gts.empty() && dets.empty();
        if (!cm.vacuous && !gts.empty()) {
            std::sort(dets.begin(), dets.end(), [](const Detection* a, const Detection* b) {
                if (a->score != b->score) return a->score > b->score;
                if (a->video_id != b->video_id) return a->video_id < b->video_id;
                if (a->frame_index != b->frame_index) return a->frame_index < b->frame_index;
                return std::tie(a->box.x1, a->box.y1, a->box.x2, a->box.y2) <
                       std::tie(b->box.x1, b->box.y1, b->box.x2, b->box.y2);
            });
            std::vector<char> used(gts.size(), 0);
            std::vector<std::pair<double, bool>> ranked;
            ranked.reserve(dets.size());
            for (const Detection* d : dets) {
                int best = -1;
                double best_iou = protocol.frame_iou_threshold;
                for (std::size_t j = 0; j < gts.size(); ++j) {
                    if (used[j] || gts[j].video_id != d->video_id || gts[j].frame != d->frame_index)
                        continue;
                    const double iou = rect_iou(gts[j].box, d->box);
                    if (iou > best_iou || (best < 0 && iou == best_iou)) {
                        best_iou = iou;
                        best = static_cast<int>(j);
                    }
                }
                if (best >= 0) used[static_cast<std::size_t>(best)] = 1;
                ranked.emplace_back(d->score, best >= 0);
            }
            cm.ap = average_precision(ranked, cm.num_gt);
        }
        per_class.push_back(cm);
    }
    return detail::aggregate(std::move(per_class), is_novel);
}

}  // namespace openmixer::eval

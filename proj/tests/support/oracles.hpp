// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <tuple>
#include <vector>

#include "openmixer/eval.hpp"
#include "openmixer/tensor.hpp"

namespace omtest {

// Exhaustive assignment minimum: tries every injective map of targets to
// queries. Exponential; fine for N <= 7.
inline double brute_force_min_cost(const openmixer::Tensor& cost) {
    const int n = cost.dim(0);
    const int g = cost.dim(1);
    std::vector<char> used(static_cast<std::size_t>(n), 0);
    double best = std::numeric_limits<double>::infinity();
    // no pruning: partial sums are not lower bounds when costs go negative
    std::function<void(int, double)> rec = [&](int target, double acc) {
        if (target == g) {
            best = std::min(best, acc);
            return;
        }
        for (int q = 0; q < n; ++q) {
            if (used[static_cast<std::size_t>(q)]) continue;
            used[static_cast<std::size_t>(q)] = 1;
            rec(target + 1, acc + cost.at(q, target));
            used[static_cast<std::size_t>(q)] = 0;
        }
    };
    rec(0, 0.0);
    return best;
}

// Reference tube overlap built from frame-index sets and per-frame overlap
// areas, sharing no code with the library version.
inline double slow_tube_iou(const openmixer::eval::DetectionTube& det,
                            const openmixer::eval::GroundTruthTube& gt, bool temporal_only) {
    std::map<int, openmixer::Rect> da, db;
    for (const auto& f : det.frames) da[f.frame_index] = f.box;
    for (const auto& [f, b] : gt.frames) db[f] = b;
    if (da.empty() || db.empty()) return 0.0;
    std::set<int> frames_a, frames_b;
    for (int f = da.begin()->first; f <= da.rbegin()->first; ++f) frames_a.insert(f);
    for (int f = db.begin()->first; f <= db.rbegin()->first; ++f) frames_b.insert(f);
    std::vector<int> inter, uni;
    std::set_intersection(frames_a.begin(), frames_a.end(), frames_b.begin(), frames_b.end(),
                          std::back_inserter(inter));
    std::set_union(frames_a.begin(), frames_a.end(), frames_b.begin(), frames_b.end(),
                   std::back_inserter(uni));
    if (inter.empty()) return 0.0;
    const double t_iou = static_cast<double>(inter.size()) / static_cast<double>(uni.size());
    if (temporal_only) return t_iou;
    double spatial = 0.0;
    for (int f : inter) {
        const openmixer::Rect& ra = da.at(f);
        const openmixer::Rect& rb = db.at(f);
        const double ix = std::max(0.0, std::min(ra.x2, rb.x2) - std::max(ra.x1, rb.x1));
        const double iy = std::max(0.0, std::min(ra.y2, rb.y2) - std::max(ra.y1, rb.y1));
        const double ia = ix * iy;
        const double ua = (ra.x2 - ra.x1) * (ra.y2 - ra.y1) + (rb.x2 - rb.x1) * (rb.y2 - rb.y1) - ia;
        spatial += ua > 0.0 ? ia / ua : 0.0;
    }
    return t_iou * spatial / static_cast<double>(inter.size());
}

// AP by direct envelope integration: for every true positive in the ranking,
// take the best precision at or below its rank, O(n^2).
inline double slow_average_precision(const std::vector<std::pair<double, bool>>& ranked,
                                     int num_gt) {
    if (num_gt <= 0) return 0.0;
    double ap = 0.0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        if (!ranked[i].second) continue;
        double best_prec = 0.0;
        for (std::size_t k = i; k < ranked.size(); ++k) {
            int tp = 0;
            for (std::size_t j = 0; j <= k; ++j)
                if (ranked[j].second) ++tp;
            best_prec = std::max(best_prec, static_cast<double>(tp) / static_cast<double>(k + 1));
        }
        ap += best_prec / static_cast<double>(num_gt);
    }
    return ap;
}

// Reference video mAP: rank with a selection sort over the same content-based
// order, precompute a full overlap matrix, greedily mark true positives.
inline openmixer::eval::MetricsReport slow_video_map(
    std::vector<openmixer::eval::DetectionTube> detected,
    const std::vector<openmixer::eval::GroundTruthTube>& gt,
    const openmixer::eval::EvalProtocol& protocol, const std::vector<bool>& is_novel) {
    using openmixer::eval::ClassMetric;
    namespace ev = openmixer::eval;
    std::vector<ClassMetric> per_class;
    for (int cls = 0; cls < static_cast<int>(is_novel.size()); ++cls) {
        const bool novel = is_novel[static_cast<std::size_t>(cls)];
        if (protocol.mode == ev::ProtocolMode::base_only && novel) continue;
        if (protocol.mode == ev::ProtocolMode::novel_only && !novel) continue;
        std::vector<ev::DetectionTube> dets;
        for (const auto& t : detected)
            if (t.class_index == cls) dets.push_back(t);
        std::vector<ev::GroundTruthTube> gts;
        for (const auto& t : gt)
            if (t.class_index == cls) gts.push_back(t);
        ClassMetric cm;
        cm.class_index = cls;
        cm.num_gt = static_cast<int>(gts.size());
        cm.num_detections = static_cast<int>(dets.size());
        cm.vacuous = dets.empty() && gts.empty();
        if (!cm.vacuous && !gts.empty()) {
            auto rank_key = [](const ev::DetectionTube& t) {
                std::vector<double> flat;
                for (const auto& f : t.frames) {
                    flat.push_back(f.box.x1);
                    flat.push_back(f.box.y1);
                    flat.push_back(f.box.x2);
                    flat.push_back(f.box.y2);
                }
                const int f0 = t.frames.empty() ? 0 : t.frames.front().frame_index;
                return std::make_tuple(-t.tube_score, t.video_id, f0,
                                       -static_cast<double>(t.frames.size()), flat);
            };
            for (std::size_t i = 0; i < dets.size(); ++i) {
                std::size_t lo = i;
                for (std::size_t j = i + 1; j < dets.size(); ++j)
                    if (rank_key(dets[j]) < rank_key(dets[lo])) lo = j;
                std::swap(dets[i], dets[lo]);
            }
            std::vector<std::vector<double>> iou(dets.size(), std::vector<double>(gts.size(), 0.0));
            for (std::size_t i = 0; i < dets.size(); ++i)
                for (std::size_t j = 0; j < gts.size(); ++j)
                    if (dets[i].video_id == gts[j].video_id)
                        iou[i][j] = slow_tube_iou(dets[i], gts[j], protocol.temporal_only);
            std::vector<char> used(gts.size(), 0);
            std::vector<std::pair<double, bool>> ranked;
            for (std::size_t i = 0; i < dets.size(); ++i) {
                int best = -1;
                for (std::size_t j = 0; j < gts.size(); ++j) {
                    if (used[j] || iou[i][j] < protocol.iou_threshold) continue;
                    if (best < 0 || iou[i][j] > iou[static_cast<std::size_t>(i)][static_cast<std::size_t>(best)])
                        best = static_cast<int>(j);
                }
                if (best >= 0) used[static_cast<std::size_t>(best)] = 1;
                ranked.emplace_back(dets[i].tube_score, best >= 0);
            }
            cm.ap = slow_average_precision(ranked, cm.num_gt);
        }
        per_class.push_back(cm);
    }
    ev::MetricsReport rep;
    double sum = 0.0, bsum = 0.0, nsum = 0.0;
    int cnt = 0, bcnt = 0, ncnt = 0;
    for (const auto& cm : per_class) {
        if (cm.vacuous) continue;
        sum += cm.ap;
        ++cnt;
        if (is_novel[static_cast<std::size_t>(cm.class_index)]) {
            nsum += cm.ap;
            ++ncnt;
        } else {
            bsum += cm.ap;
            ++bcnt;
        }
    }
    rep.per_class = per_class;
    rep.mean_ap = cnt ? sum / cnt : 0.0;
    rep.base_ap = bcnt ? bsum / bcnt : 0.0;
    rep.novel_ap = ncnt ? nsum / ncnt : 0.0;
    rep.has_base = bcnt > 0;
    rep.has_novel = ncnt > 0;
    return rep;
}

// Reference frame mAP: flattens ground-truth tubes into per-frame boxes,
// ranks detections with a selection sort, and matches greedily against the
// best unused box above the threshold on the same video and frame.
inline openmixer::eval::MetricsReport slow_frame_map(
    const std::vector<openmixer::Detection>& detections,
    const std::vector<openmixer::eval::GroundTruthTube>& gt,
    const openmixer::eval::EvalProtocol& protocol, const std::vector<bool>& is_novel) {
    namespace ev = openmixer::eval;
    const auto box_iou = [](const openmixer::Rect& a, const openmixer::Rect& b) {
        const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
        const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
        const double inter = ix * iy;
        const double uni =
            (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
        return uni > 0.0 ? inter / uni : 0.0;
    };

    std::vector<ev::ClassMetric> per_class;
    for (int cls = 0; cls < static_cast<int>(is_novel.size()); ++cls) {
        const bool novel = is_novel[static_cast<std::size_t>(cls)];
        if (protocol.mode == ev::ProtocolMode::base_only && novel) continue;
        if (protocol.mode == ev::ProtocolMode::novel_only && !novel) continue;

        struct GtBox {
            std::string video_id;
            int frame;
            openmixer::Rect box;
        };
        std::vector<GtBox> gts;
        for (const auto& t : gt)
            if (t.class_index == cls)
                for (const auto& [f, b] : t.frames) gts.push_back(GtBox{t.video_id, f, b});
        std::vector<openmixer::Detection> dets;
        for (const auto& d : detections)
            if (d.class_index == cls) dets.push_back(d);

        ev::ClassMetric cm;
        cm.class_index = cls;
        cm.num_gt = static_cast<int>(gts.size());
        cm.num_detections = static_cast<int>(dets.size());
        cm.vacuous = dets.empty() && gts.empty();
        if (!cm.vacuous && !gts.empty()) {
            const auto rank_key = [](const openmixer::Detection& d) {
                return std::make_tuple(-d.score, d.video_id, d.frame_index, d.box.x1, d.box.y1,
                                       d.box.x2, d.box.y2);
            };
            for (std::size_t i = 0; i < dets.size(); ++i) {
                std::size_t lo = i;
                for (std::size_t j = i + 1; j < dets.size(); ++j)
                    if (rank_key(dets[j]) < rank_key(dets[lo])) lo = j;
                std::swap(dets[i], dets[lo]);
            }
            std::vector<char> used(gts.size(), 0);
            std::vector<std::pair<double, bool>> ranked;
            for (const auto& d : dets) {
                int best = -1;
                double best_iou = 0.0;
                for (std::size_t j = 0; j < gts.size(); ++j) {
                    if (used[j] || gts[j].video_id != d.video_id || gts[j].frame != d.frame_index)
                        continue;
                    const double iou = box_iou(gts[j].box, d.box);
                    if (iou < protocol.frame_iou_threshold) continue;
                    if (best < 0 || iou > best_iou) {
                        best = static_cast<int>(j);
                        best_iou = iou;
                    }
                }
                if (best >= 0) used[static_cast<std::size_t>(best)] = 1;
                ranked.emplace_back(d.score, best >= 0);
            }
            cm.ap = slow_average_precision(ranked, cm.num_gt);
        }
        per_class.push_back(cm);
    }

    ev::MetricsReport rep;
    double sum = 0.0, bsum = 0.0, nsum = 0.0;
    int cnt = 0, bcnt = 0, ncnt = 0;
    for (const auto& cm : per_class) {
        if (cm.vacuous) continue;
        sum += cm.ap;
        ++cnt;
        if (is_novel[static_cast<std::size_t>(cm.class_index)]) {
            nsum += cm.ap;
            ++ncnt;
        } else {
            bsum += cm.ap;
            ++bcnt;
        }
    }
    rep.per_class = per_class;
    rep.mean_ap = cnt ? sum / cnt : 0.0;
    rep.base_ap = bcnt ? bsum / bcnt : 0.0;
    rep.novel_ap = ncnt ? nsum / ncnt : 0.0;
    rep.has_base = bcnt > 0;
    rep.has_novel = ncnt > 0;
    return rep;
}

}  // namespace omtest

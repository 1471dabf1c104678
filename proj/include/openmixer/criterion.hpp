// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <limits>
#include <utility>
#include <vector>

#include "openmixer/autodiff.hpp"
#include "openmixer/types.hpp"

namespace openmixer::criterion {

// 1 - GIoU in corner form; symmetric, range [0,2], 0 iff identical boxes.
inline double giou_distance(const Rect& a, const Rect& b) {
    if (a.area() <= 0.0 || b.area() <= 0.0)
        throw InputError("giou_distance: degenerate zero-area box");
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    const double inter = std::max(iw, 0.0) * std::max(ih, 0.0);
    const double uni = a.area() + b.area() - inter;
    const double hull = (std::max(a.x2, b.x2) - std::min(a.x1, b.x1)) *
                        (std::max(a.y2, b.y2) - std::min(a.y1, b.y1));
    const double giou = inter / uni - (hull - uni) / hull;
    return 1.0 - giou;
}

inline double giou_distance(const Box& a, const Box& b) {
    return giou_distance(Rect::from_box(a), Rect::from_box(b));
}

struct MatchResult {
    std::vector<std::pair<int, int>> assignment;  // (query_index, target_index)
    std::vector<int> unmatched_queries;
};

// Optimal assignment of G targets to N queries (G <= N), minimizing total
// cost. Shortest augmenting path with potentials, O(G * N^2).
inline MatchResult match_hungarian(const Tensor& cost) {
    if (cost.ndim() != 2) throw InputError("match_hungarian: expected 2D cost");
    const int n = cost.dim(0);  // queries
    const int g = cost.dim(1);  // targets
    if (g > n) throw InputError("match_hungarian: more targets than queries");
    for (std::size_t i = 0; i < cost.numel(); ++i)
        if (!std::isfinite(cost[i])) throw InputError("match_hungarian: non-finite cost");

    const double inf = std::numeric_limits<double>::infinity();
    // 1-indexed; row side = targets (fully assigned), column side = queries.
    std::vector<double> u(static_cast<std::size_t>(g) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<int> p(static_cast<std::size_t>(n) + 1, 0);
    std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);
    for (int i = 1; i <= g; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
        std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const int i0 = p[static_cast<std::size_t>(j0)];
            int j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost.at(j - 1, i0 - 1) - u[static_cast<std::size_t>(i0)] -
                                   v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0);
    }

    MatchResult result;
    std::vector<char> matched(static_cast<std::size_t>(n), 0);
    for (int j = 1; j <= n; ++j) {
        if (p[static_cast<std::size_t>(j)] != 0) {
            result.assignment.emplace_back(j - 1, p[static_cast<std::size_t>(j)] - 1);
            matched[static_cast<std::size_t>(j - 1)] = 1;
        }
    }
    std::sort(result.assignment.begin(), result.assignment.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    for (int j = 0; j < n; ++j)
        if (!matched[static_cast<std::size_t>(j)]) result.unmatched_queries.push_back(j);
    return result;
}

// Ground truth for one clip: keyframe boxes (normalized) and class indices.
struct Targets {
    std::vector<Box> boxes;
    std::vector<int> class_indices;

    int size() const { return static_cast<int>(boxes.size()); }
};

struct CostWeights {
    double score = 2.0;
    double l1 = 5.0;
    double giou = 2.0;
};

// Class-agnostic matching cost: person-score complement + box L1 + GIoU
// distance. No action term; recognition is decoupled from localization.
inline Tensor matching_cost(const BoxSet& boxes, const Targets& targets,
                            const CostWeights& w = {}) {
    const int n = boxes.size();
    const int g = targets.size();
    Tensor cost({n, g});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < g; ++j) {
            const Box& a = boxes.boxes[static_cast<std::size_t>(i)];
            const Box& b = targets.boxes[static_cast<std::size_t>(j)];
            const double l1 = std::fabs(a.cx - b.cx) + std::fabs(a.cy - b.cy) +
                              std::fabs(a.w - b.w) + std::fabs(a.h - b.h);
            cost.at(i, j) = w.score * (1.0 - boxes.person_scores[static_cast<std::size_t>(i)]) +
                            w.l1 * l1 + w.giou * giou_distance(a, b);
        }
    return cost;
}

// Differentiable inputs of one cascade stage, as the loss sees them.
struct StagePrediction {
    Var score_logits;   // [N] person-score logits
    Var boxes;          // [N,4] (cx,cy,w,h)
    Var action_logits;  // [N,C]
};

namespace detail {

// Differentiable GIoU distance for matched [K,4] cxcywh box tensors.
inline Var giou_distance_var(const Var& pred, const Var& gt) {
    Var half_w = scale(column(pred, 2), 0.5);
    Var half_h = scale(column(pred, 3), 0.5);
    Var ax1 = sub(column(pred, 0), half_w);
    Var ax2 = add(column(pred, 0), half_w);
    Var ay1 = sub(column(pred, 1), half_h);
    Var ay2 = add(column(pred, 1), half_h);
    Var ghw = scale(column(gt, 2), 0.5);
    Var ghh = scale(column(gt, 3), 0.5);
    Var bx1 = sub(column(gt, 0), ghw);
    Var bx2 = add(column(gt, 0), ghw);
    Var by1 = sub(column(gt, 1), ghh);
    Var by2 = add(column(gt, 1), ghh);

    Var iw = relu(sub(vmin(ax2, bx2), vmax(ax1, bx1)));
    Var ih = relu(sub(vmin(ay2, by2), vmax(ay1, by1)));
    Var inter = mul(iw, ih);
    Var area_a = mul(column(pred, 2), column(pred, 3));
    Var area_b = mul(column(gt, 2), column(gt, 3));
    Var uni = sub(add(area_a, area_b), inter);
    Var hull = mul(sub(vmax(ax2, bx2), vmin(ax1, bx1)), sub(vmax(ay2, by2), vmin(ay1, by1)));
    Var giou = sub(vdiv(inter, uni), vdiv(sub(hull, uni), hull));
    return add_scalar(neg(giou), 1.0);
}

}  // namespace detail

struct SetLoss {
    Var bce, l1, giou;
};

// Per-stage set loss: person-score BCE over all queries (matched = positive),
// box L1 and GIoU distance averaged over matched pairs.
inline SetLoss set_loss(const StagePrediction& stage, const Targets& targets,
                        const MatchResult& match) {
    const int n = stage.score_logits->value.dim(0);
    Tensor bce_targets({n});
    for (const auto& [qi, ti] : match.assignment) bce_targets.at(qi) = 1.0;

    // BCE on clamped probabilities rather than the logit form, so saturated
    // scores cannot produce infinities.
    Var prob = clamp(sigmoid(stage.score_logits), 1e-6, 1.0 - 1e-6);
    Var t = constant(bce_targets);
    Var one_minus_t = constant([&] {
        Tensor inv({n});
        for (int i = 0; i < n; ++i) inv.at(i) = 1.0 - bce_targets.at(i);
        return inv;
    }());
    Var bce = neg(mean_all(add(mul(t, vlog(prob)),
                               mul(one_minus_t, vlog(add_scalar(neg(prob), 1.0))))));

    if (match.assignment.empty()) {
        return SetLoss{bce, constant(Tensor::scalar(0.0)), constant(Tensor::scalar(0.0))};
    }

    std::vector<int> qidx;
    Tensor gt({static_cast<int>(match.assignment.size()), 4});
    int row = 0;
    for (const auto& [qi, ti] : match.assignment) {
        qidx.push_back(qi);
        const Box& b = targets.boxes[static_cast<std::size_t>(ti)];
        gt.at(row, 0) = b.cx;
        gt.at(row, 1) = b.cy;
        gt.at(row, 2) = b.w;
        gt.at(row, 3) = b.h;
        ++row;
    }
    Var matched = gather_rows(stage.boxes, qidx);
    Var gt_var = constant(gt);
    Var diff = vabs(sub(matched, gt_var));
    // mean over pairs of the per-pair 4-coordinate L1 norm
    Var l1 = scale(mean_all(diff), 4.0);
    Var giou = mean_all(detail::giou_distance_var(matched, gt_var));
    return SetLoss{bce, l1, giou};
}

// Cross-entropy over matched queries only; zero when nothing matched.
inline Var action_loss(const Var& action_logits, const MatchResult& match,
                       const std::vector<int>& target_classes) {
    if (match.assignment.empty()) return constant(Tensor::scalar(0.0));
    const int c = action_logits->value.dim(1);
    std::vector<int> qidx;
    std::vector<int> labels;
    for (const auto& [qi, ti] : match.assignment) {
        const int cls = target_classes[static_cast<std::size_t>(ti)];
        if (cls < 0 || cls >= c) throw InputError("action_loss: target class outside vocabulary");
        qidx.push_back(qi);
        labels.push_back(cls);
    }
    return cross_entropy_rows(gather_rows(action_logits, qidx), labels);
}

struct LossWeights {
    double w1 = 2.0;   // set-loss weight
    double w2 = 48.0;  // action-loss weight
};

struct StageLossValues {
    double bce = 0.0, l1 = 0.0, giou = 0.0, act = 0.0;
};

struct LossBreakdown {
    std::vector<StageLossValues> per_stage;
    Var total;  // w1*(bce+l1+giou) + w2*act summed over stages
};

// Every stage is matched and supervised independently; the match uses the
// numeric snapshot of each stage's boxes and scores (no gradient through the
// assignment).
inline LossBreakdown total_loss(const std::vector<StagePrediction>& stages,
                                const Targets& targets, const LossWeights& w = {},
                                const CostWeights& cw = {}) {
    LossBreakdown out;
    Var total = constant(Tensor::scalar(0.0));
    for (const auto& stage : stages) {
        const int n = stage.score_logits->value.dim(0);
        BoxSet snapshot;
        snapshot.boxes.reserve(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            snapshot.boxes.push_back(Box{stage.boxes->value.at(i, 0), stage.boxes->value.at(i, 1),
                                         stage.boxes->value.at(i, 2), stage.boxes->value.at(i, 3)});
            double logit = stage.score_logits->value.at(i);
            snapshot.person_scores.push_back(1.0 / (1.0 + std::exp(-logit)));
        }
        MatchResult match;
        if (targets.size() > 0) match = match_hungarian(matching_cost(snapshot, targets, cw));
        else
            for (int i = 0; i < n; ++i) match.unmatched_queries.push_back(i);

        SetLoss sl = set_loss(stage, targets, match);
        Var act = action_loss(stage.action_logits, match, targets.class_indices);
        Var stage_total = add(scale(add(add(sl.bce, sl.l1), sl.giou), w.w1), scale(act, w.w2));
        total = add(total, stage_total);
        out.per_stage.push_back(StageLossValues{sl.bce->value.item(), sl.l1->value.item(),
                                                sl.giou->value.item(), act->value.item()});
    }
    out.total = total;
    return out;
}

}  // namespace openmixer::criterion

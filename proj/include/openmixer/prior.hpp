// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "openmixer/backend.hpp"
#include "openmixer/common.hpp"
#include "openmixer/tensor.hpp"
#include "openmixer/types.hpp"

namespace openmixer::prior {

struct AttentionMap {
    Tensor values;  // [T, h, w]
    int keyframe_index = 0;

    void validate() const {
        if (values.ndim() != 3) throw ValidationError("attention map: need [T, h, w]");
        if (keyframe_index < 0 || keyframe_index >= values.dim(0))
            throw ValidationError("attention map: keyframe outside [0, T)");
        for (double v : values.raw())
            if (!std::isfinite(v)) throw ValidationError("attention map: non-finite value");
    }
};

struct PrematchResult {
    int class_index = 0;
    Tensor feature;  // [D], the winning text row
};

// Picks the text feature most similar to the video feature; ties break toward
// the lowest class index, so row permutation moves the index but never the
// winning feature.
inline PrematchResult prematch_text(const Tensor& f_v, const Tensor& text_features) {
    if (text_features.ndim() != 2 || text_features.dim(0) < 1)
        throw InputError("prematch_text: empty vocabulary");
    if (f_v.ndim() != 1 || f_v.dim(0) != text_features.dim(1))
        throw InputError("prematch_text: feature width mismatch");
    const int c = text_features.dim(0), d = text_features.dim(1);
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < c; ++k) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += text_features.at(k, j) * f_v.at(j);
        if (s > best_score) {
            best_score = s;
            best = k;
        }
    }
    PrematchResult out;
    out.class_index = best;
    out.feature = Tensor({d});
    for (int j = 0; j < d; ++j) out.feature.at(j) = text_features.at(best, j);
    return out;
}

// Cosine similarity of every (unit-norm) patch feature with one text feature.
inline Tensor patch_text_correlation(const Tensor& v_norm, const Tensor& f_t) {
    if (v_norm.ndim() != 4) throw InputError("patch_text_correlation: need [T, h, w, D]");
    if (f_t.ndim() != 1 || f_t.dim(0) != v_norm.dim(3))
        throw InputError("patch_text_correlation: feature width mismatch");
    const int t = v_norm.dim(0), h = v_norm.dim(1), w = v_norm.dim(2), d = v_norm.dim(3);
    Tensor out({t, h, w});
    for (int f = 0; f < t; ++f)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                double s = 0.0;
                for (int k = 0; k < d; ++k) s += v_norm.at(f, i, j, k) * f_t.at(k);
                out.at(f, i, j) = s;
            }
    return out;
}

// Elementwise 1 - S. CLIP-family attention concentrates on background, so
// those backends flag the map for reversal; the toy backend does not.
inline Tensor reverse_attention(const Tensor& s) {
    Tensor out(s.shape());
    for (std::size_t i = 0; i < s.numel(); ++i) out[i] = 1.0 - s.raw()[i];
    return out;
}

// prematch -> correlate -> optional reversal, as one step from a bundle.
inline AttentionMap compute_attention(const backend::VLMFeatureBundle& bundle, int keyframe) {
    const auto match = prematch_text(bundle.video_feature, bundle.text_features);
    AttentionMap map;
    map.values = patch_text_correlation(bundle.patch_features_norm, match.feature);
    if (bundle.reversed_attention) map.values = reverse_attention(map.values);
    map.keyframe_index = keyframe;
    map.validate();
    return map;
}

enum class SampleMode { deterministic, stochastic };

// N distinct keyframe cells as normalized cell-center coordinates (u, v).
// Deterministic mode takes the N largest values with row-major tie-breaks;
// stochastic mode draws without replacement from the softmax of the slice.
inline std::vector<std::pair<double, double>> sample_prior_locations(
    const AttentionMap& map, int n, SampleMode mode = SampleMode::deterministic,
    Rng* rng = nullptr, double softmax_temperature = 1.0) {
    map.validate();
    const int h = map.values.dim(1), w = map.values.dim(2);
    if (n < 1) throw InputError("sample_prior_locations: need n >= 1");
    if (n > h * w)
        throw InputError("sample_prior_locations: more queries than keyframe cells");
    std::vector<double> slice(static_cast<std::size_t>(h) * w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            slice[static_cast<std::size_t>(i * w + j)] = map.values.at(map.keyframe_index, i, j);

    std::vector<int> chosen;
    if (mode == SampleMode::deterministic) {
        std::vector<int> order(slice.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return slice[static_cast<std::size_t>(a)] > slice[static_cast<std::size_t>(b)];
        });  // stable: equal values stay in row-major order
        chosen.assign(order.begin(), order.begin() + n);
    } else {
        if (rng == nullptr) throw InputError("sample_prior_locations: stochastic mode needs an rng");
        if (softmax_temperature <= 0.0)
            throw ConfigError("sample_prior_locations: temperature must be positive");
        double mx = slice[0];
        for (double v : slice) mx = std::max(mx, v);
        std::vector<double> prob(slice.size());
        for (std::size_t i = 0; i < slice.size(); ++i)
            prob[i] = std::exp((slice[i] - mx) / softmax_temperature);
        std::vector<char> taken(slice.size(), 0);
        for (int k = 0; k < n; ++k) {
            double total = 0.0;
            for (std::size_t i = 0; i < prob.size(); ++i)
                if (!taken[i]) total += prob[i];
            double r = rng->uniform() * total;
            int pick = -1;
            for (std::size_t i = 0; i < prob.size(); ++i) {
                if (taken[i]) continue;
                r -= prob[i];
                pick = static_cast<int>(i);
                if (r <= 0.0) break;
            }
            taken[static_cast<std::size_t>(pick)] = 1;
            chosen.push_back(pick);
        }
    }
    std::vector<std::pair<double, double>> centers;
    centers.reserve(static_cast<std::size_t>(n));
    for (int cell : chosen) {
        const int i = cell / w, j = cell % w;
        centers.emplace_back((j + 0.5) / w, (i + 0.5) / h);
    }
    return centers;
}

enum class PriorSource { attention, ground_truth, random, external };

struct PriorConfig {
    PriorSource source = PriorSource::attention;
    Rng* rng = nullptr;                               // random source
    const std::vector<Box>* replacement_boxes = nullptr;  // ground_truth / external sources
};

// Initial queries: prior centers with the full spatial range (w = h = 1) and
// neutral person scores. Alternative sources replace the centers only.
inline BoxSet init_box_queries(const std::vector<std::pair<double, double>>& centers,
                               const PriorConfig& cfg = {}) {
    if (centers.empty()) throw InputError("init_box_queries: no centers");
    const int n = static_cast<int>(centers.size());
    BoxSet out;
    out.stage = 0;
    out.person_scores.assign(static_cast<std::size_t>(n), 0.5);
    out.boxes.resize(static_cast<std::size_t>(n));
    switch (cfg.source) {
        case PriorSource::attention:
            for (int i = 0; i < n; ++i)
                out.boxes[static_cast<std::size_t>(i)] =
                    Box{centers[static_cast<std::size_t>(i)].first,
                        centers[static_cast<std::size_t>(i)].second, 1.0, 1.0};
            break;
        case PriorSource::random: {
            if (cfg.rng == nullptr) throw InputError("init_box_queries: random source needs an rng");
            for (int i = 0; i < n; ++i) {
                const double u = cfg.rng->uniform();
                const double v = cfg.rng->uniform();
                out.boxes[static_cast<std::size_t>(i)] = Box{u, v, 1.0, 1.0};
            }
            break;
        }
        case PriorSource::ground_truth:
        case PriorSource::external: {
            if (cfg.replacement_boxes == nullptr || cfg.replacement_boxes->empty())
                throw InputError("init_box_queries: replacement source has no boxes");
            const auto& src = *cfg.replacement_boxes;
            for (int i = 0; i < n; ++i) {
                const Box& b = src[static_cast<std::size_t>(i) % src.size()];
                out.boxes[static_cast<std::size_t>(i)] = Box{b.cx, b.cy, 1.0, 1.0};
            }
            break;
        }
    }
    out.validate();
    return out;
}

}  // namespace openmixer::prior

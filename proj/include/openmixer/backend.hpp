// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cctype>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "openmixer/autodiff.hpp"
#include "openmixer/common.hpp"
#include "openmixer/dfa.hpp"
#include "openmixer/nn.hpp"
#include "openmixer/palette.hpp"
#include "openmixer/tensor.hpp"
#include "openmixer/types.hpp"

namespace openmixer::backend {

struct BackendConfig {
    std::string kind = "toy";  // toy | external
    int patch_size = 8;
    int feature_dim = 32;  // D
    double temperature = 0.01;
    bool reversed_attention = false;  // on for CLIP-family backends, off for toy
    std::uint64_t seed = 7;

    void validate() const {
        if (kind != "toy" && kind != "external")
            throw ConfigError("backend.kind must be toy or external");
        if (patch_size < 1) throw ConfigError("backend.patch_size must be positive");
        if (feature_dim < 16) throw ConfigError("backend.feature_dim must be at least 16");
        if (temperature <= 0.0) throw ConfigError("backend.temperature must be positive");
    }
};

struct VLMFeatureBundle {
    Tensor patch_features;       // [T, h, w, D]
    Tensor patch_features_norm;  // same shape, unit-norm D-vectors
    Tensor video_feature;        // [D], unit norm
    Tensor text_features;        // [C, D], unit-norm rows
    double temperature = 0.01;
    bool reversed_attention = false;

    int t() const { return patch_features.dim(0); }
    int h() const { return patch_features.dim(1); }
    int w() const { return patch_features.dim(2); }
    int d() const { return patch_features.dim(3); }

    void validate() const {
        if (patch_features.ndim() != 4 || !patch_features_norm.same_shape(patch_features))
            throw ValidationError("feature bundle: bad patch feature shapes");
        if (temperature <= 0.0) throw ValidationError("feature bundle: bad temperature");
        auto check_unit = [&](const double* v, int n, const char* what) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += v[i] * v[i];
            if (std::abs(std::sqrt(s) - 1.0) > 1e-5)
                throw ValidationError(std::string("feature bundle: ") + what + " not unit-norm");
        };
        const int dd = d();
        for (int i = 0; i < t() * h() * w(); ++i)
            check_unit(patch_features_norm.data() + static_cast<std::size_t>(i) * dd, dd, "patch row");
        check_unit(video_feature.data(), dd, "video feature");
        for (int c = 0; c < text_features.dim(0); ++c)
            check_unit(text_features.data() + static_cast<std::size_t>(c) * dd, dd, "text row");
    }
};

namespace detail {

// Orthonormal anchor directions: one per palette color, one for the gray
// background, one carrying the motion statistic. Seeded Gram-Schmidt.
inline Tensor anchor_basis(int d, std::uint64_t seed) {
    static std::map<std::pair<std::uint64_t, int>, Tensor> cache;
    const auto key = std::make_pair(seed, d);
    const auto it = cache.find(key);
    if (it != cache.end()) return it->second;

    const int rows = static_cast<int>(palette_colors().size()) + 2;
    if (d < rows) throw ConfigError("feature_dim too small for the toy anchor basis");
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    Tensor basis({rows, d});
    for (int r = 0; r < rows; ++r) {
        for (int attempt = 0;; ++attempt) {
            if (attempt > 16) throw ValidationError("anchor basis: degenerate draw");
            std::vector<double> v(static_cast<std::size_t>(d));
            for (auto& x : v) x = rng.gaussian();
            for (int p = 0; p < r; ++p) {
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += v[static_cast<std::size_t>(j)] * basis.at(p, j);
                for (int j = 0; j < d; ++j) v[static_cast<std::size_t>(j)] -= dot * basis.at(p, j);
            }
            double norm = 0.0;
            for (double x : v) norm += x * x;
            norm = std::sqrt(norm);
            if (norm < 1e-6) continue;
            for (int j = 0; j < d; ++j) basis.at(r, j) = v[static_cast<std::size_t>(j)] / norm;
            break;
        }
    }
    cache[key] = basis;
    return basis;
}

inline int gray_anchor_index() { return static_cast<int>(palette_colors().size()); }
inline int motion_anchor_index() { return gray_anchor_index() + 1; }

inline std::vector<std::string> tokenize_lower(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        if (std::isalpha(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            tokens.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

}  // namespace detail

// Toy text encoder. Sentences naming a palette color map onto that color's
// anchor direction, which makes distinct-color class features exactly
// orthonormal; anything else falls back to a hash-seeded unit vector.
inline Tensor toy_text_embedding(const std::string& sentence, const BackendConfig& cfg) {
    cfg.validate();
    const Tensor basis = detail::anchor_basis(cfg.feature_dim, cfg.seed);
    for (const auto& token : detail::tokenize_lower(sentence)) {
        const int color = palette_color_index(token);
        if (color >= 0) {
            Tensor out({cfg.feature_dim});
            for (int j = 0; j < cfg.feature_dim; ++j) out.at(j) = basis.at(color, j);
            return out;
        }
    }
    Rng rng(fnv1a64(sentence) ^ cfg.seed);
    Tensor out({cfg.feature_dim});
    double norm = 0.0;
    for (int j = 0; j < cfg.feature_dim; ++j) {
        out.at(j) = rng.gaussian();
        norm += out.at(j) * out.at(j);
    }
    norm = std::sqrt(norm);
    if (norm < 1e-8) throw ValidationError("toy_text_embedding: degenerate hash draw");
    for (int j = 0; j < cfg.feature_dim; ++j) out.at(j) /= norm;
    return out;
}

inline dfa::Vocabulary build_vocabulary(const std::vector<dfa::VocabEntry>& classes,
                                        const BackendConfig& cfg) {
    if (classes.empty()) throw InputError("build_vocabulary: empty class list");
    std::vector<Tensor> per_class;
    for (const auto& entry : classes) {
        if (entry.prompts.empty())
            throw InputError("build_vocabulary: class '" + entry.name + "' has no prompts");
        Tensor rows({static_cast<int>(entry.prompts.size()), cfg.feature_dim});
        for (std::size_t k = 0; k < entry.prompts.size(); ++k) {
            const Tensor e = toy_text_embedding(entry.prompts[k], cfg);
            for (int j = 0; j < cfg.feature_dim; ++j) rows.at(static_cast<int>(k), j) = e.at(j);
        }
        per_class.push_back(std::move(rows));
    }
    dfa::Vocabulary vocab;
    vocab.classes = classes;
    vocab.text_features = dfa::ensemble_text_features(per_class);
    vocab.validate();
    return vocab;
}

// Arithmetic mean over frames, re-normalized to unit length.
inline Tensor temporal_mean_pool(const Tensor& frame_features) {
    if (frame_features.ndim() != 2 || frame_features.dim(0) < 1)
        throw InputError("temporal_mean_pool: need [T, D] with T >= 1");
    const int t = frame_features.dim(0), d = frame_features.dim(1);
    Tensor out({d});
    for (int i = 0; i < t; ++i)
        for (int j = 0; j < d; ++j) out.at(j) += frame_features.at(i, j);
    double norm = 0.0;
    for (int j = 0; j < d; ++j) {
        out.at(j) /= t;
        norm += out.at(j) * out.at(j);
    }
    norm = std::sqrt(norm);
    if (norm < 1e-8) throw InputError("temporal_mean_pool: frames cancel to zero");
    for (int j = 0; j < d; ++j) out.at(j) /= norm;
    return out;
}

// Deterministic toy encoder: per patch, the mean color is softly matched
// against the palette-plus-gray anchors and the frame-difference magnitude
// rides on a dedicated direction. Appearance of class c therefore lands near
// that class's text feature while the background stays orthogonal to all of
// them.
inline VLMFeatureBundle encode_clip(const VideoClip& clip, const dfa::Vocabulary& vocabulary,
                                    const BackendConfig& cfg) {
    cfg.validate();
    if (cfg.kind != "toy")
        throw ConfigError("encode_clip: only the toy backend is built in; external backends "
                          "supply bundles through the same interface");
    if (vocabulary.size() == 0) throw InputError("encode_clip: empty vocabulary");
    if (vocabulary.text_features.dim(1) != cfg.feature_dim)
        throw ConfigError("encode_clip: vocabulary feature width != backend feature_dim");
    const int t = clip.t(), h_px = clip.h(), w_px = clip.w();
    if (t < 1) throw InputError("encode_clip: empty clip");
    if (h_px % cfg.patch_size != 0 || w_px % cfg.patch_size != 0)
        throw ConfigError("encode_clip: frame size not a multiple of the patch size");
    const int h = h_px / cfg.patch_size, w = w_px / cfg.patch_size;
    const int d = cfg.feature_dim;
    const Tensor basis = detail::anchor_basis(d, cfg.seed);
    const auto& colors = palette_colors();
    const int num_anchors = static_cast<int>(colors.size()) + 1;  // + gray
    const double beta = 30.0;

    VLMFeatureBundle bundle;
    bundle.patch_features = Tensor({t, h, w, d});
    bundle.patch_features_norm = Tensor({t, h, w, d});
    Tensor frame_means({t, d});

    for (int f = 0; f < t; ++f) {
        const int prev = f > 0 ? f - 1 : (t > 1 ? 1 : 0);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                double rgb[3] = {0, 0, 0};
                double motion = 0.0;
                for (int y = i * cfg.patch_size; y < (i + 1) * cfg.patch_size; ++y)
                    for (int x = j * cfg.patch_size; x < (j + 1) * cfg.patch_size; ++x)
                        for (int c = 0; c < 3; ++c) {
                            rgb[c] += clip.frames.at(f, y, x, c);
                            motion += std::abs(clip.frames.at(f, y, x, c) -
                                               clip.frames.at(prev, y, x, c));
                        }
                const double inv_px = 1.0 / (cfg.patch_size * cfg.patch_size);
                for (double& c : rgb) c *= inv_px;
                motion *= inv_px / 3.0;

                // soft palette assignment
                std::vector<double> weights(static_cast<std::size_t>(num_anchors));
                double wsum = 0.0;
                for (int a = 0; a < num_anchors; ++a) {
                    const double ar = a < static_cast<int>(colors.size()) ? colors[static_cast<std::size_t>(a)].r : 0.5;
                    const double ag = a < static_cast<int>(colors.size()) ? colors[static_cast<std::size_t>(a)].g : 0.5;
                    const double ab = a < static_cast<int>(colors.size()) ? colors[static_cast<std::size_t>(a)].b : 0.5;
                    const double d2 = (rgb[0] - ar) * (rgb[0] - ar) + (rgb[1] - ag) * (rgb[1] - ag) +
                                      (rgb[2] - ab) * (rgb[2] - ab);
                    weights[static_cast<std::size_t>(a)] = std::exp(-beta * d2);
                    wsum += weights[static_cast<std::size_t>(a)];
                }
                double norm = 0.0;
                for (int k = 0; k < d; ++k) {
                    double v = 0.0;
                    for (int a = 0; a < num_anchors; ++a)
                        v += weights[static_cast<std::size_t>(a)] / wsum * basis.at(a, k);
                    v += motion * basis.at(detail::motion_anchor_index(), k);
                    bundle.patch_features.at(f, i, j, k) = v;
                    norm += v * v;
                }
                norm = std::sqrt(norm);
                for (int k = 0; k < d; ++k) {
                    bundle.patch_features_norm.at(f, i, j, k) =
                        bundle.patch_features.at(f, i, j, k) / norm;
                    frame_means.at(f, k) += bundle.patch_features_norm.at(f, i, j, k) / (h * w);
                }
            }
    }
    bundle.video_feature = temporal_mean_pool(frame_means);
    bundle.text_features = vocabulary.text_features;
    bundle.temperature = cfg.temperature;
    bundle.reversed_attention = cfg.reversed_attention;
    bundle.validate();
    return bundle;
}

// 1-D linear interpolation over the temporal axis; endpoints map to
// endpoints, so equal lengths copy exactly.
inline Tensor interpolate_temporal_pe(const Tensor& pe, int target_len) {
    if (pe.ndim() != 2 || pe.dim(0) < 1) throw InputError("temporal pe: need [L, D]");
    if (target_len < 1) throw InputError("temporal pe: target length must be positive");
    const int src = pe.dim(0), d = pe.dim(1);
    Tensor out({target_len, d});
    for (int i = 0; i < target_len; ++i) {
        double x = target_len == 1 ? 0.5 * (src - 1)
                                   : static_cast<double>(i) * (src - 1) / (target_len - 1);
        const int lo = std::min(src - 1, static_cast<int>(x));
        const int hi = std::min(src - 1, lo + 1);
        const double frac = x - lo;
        for (int j = 0; j < d; ++j)
            out.at(i, j) = (1.0 - frac) * pe.at(lo, j) + frac * pe.at(hi, j);
    }
    return out;
}

// Square-grid bilinear interpolation; the source length must be a perfect
// square. Equal grids copy exactly.
inline Tensor interpolate_spatial_pe(const Tensor& pe, int target_grid) {
    if (pe.ndim() != 2 || pe.dim(0) < 1) throw InputError("spatial pe: need [L, D]");
    if (target_grid < 1) throw InputError("spatial pe: target grid must be positive");
    const int src_len = pe.dim(0), d = pe.dim(1);
    const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(src_len))));
    if (g * g != src_len) throw InputError("spatial pe: source length is not a perfect square");
    Tensor grid({1, g, g, d});
    std::copy(pe.raw().begin(), pe.raw().end(), grid.raw().begin());
    Var resized = resize_bilinear(constant(std::move(grid)), target_grid, target_grid);
    Tensor out({target_grid * target_grid, d});
    out.raw() = resized->value.raw();
    return out;
}

struct PyramidConfig {
    int dp = 32;  // pyramid channel width, independent of D
    std::vector<double> strides = {0.25, 0.5, 1.0, 2.0};
};

struct PyramidParams {
    Linear proj;                   // D -> Dp
    std::vector<Linear> level_fc;  // Dp -> Dp residual transforms, zero-initialized
};

inline PyramidParams make_pyramid_params(ParamStore& ps, const std::string& prefix, int d,
                                         const PyramidConfig& cfg, Rng& rng) {
    PyramidParams p;
    p.proj = make_linear(ps, prefix + ".proj", d, cfg.dp, rng);
    for (std::size_t l = 0; l < cfg.strides.size(); ++l)
        p.level_fc.push_back(
            make_linear_zero(ps, prefix + ".level" + std::to_string(l), cfg.dp, cfg.dp));
    return p;
}

struct FeaturePyramid {
    std::vector<Var> levels;  // [T, h_l, w_l, Dp]
    std::vector<double> strides;
    std::vector<std::pair<int, int>> sizes;
    int t = 0;
    int dp = 0;
};

// Residual multi-scale pyramid: level l is the bilinear rescale of the
// projected features plus a learned per-level transform of that rescale.
// Zeroed transforms reproduce the pure interpolation path exactly.
inline FeaturePyramid build_pyramid(const Var& v, const PyramidParams& params,
                                    const PyramidConfig& cfg) {
    if (v->value.ndim() != 4) throw InputError("build_pyramid: need [T, h, w, D]");
    if (params.level_fc.size() != cfg.strides.size())
        throw ConfigError("build_pyramid: one transform per stride required");
    const int t = v->value.dim(0), h = v->value.dim(1), w = v->value.dim(2), d = v->value.dim(3);
    Var flat = reshape(v, {t * h * w, d});
    Var projected = reshape(params.proj(flat), {t, h, w, cfg.dp});

    FeaturePyramid pyr;
    pyr.strides = cfg.strides;
    pyr.t = t;
    pyr.dp = cfg.dp;
    for (std::size_t l = 0; l < cfg.strides.size(); ++l) {
        const int hl = static_cast<int>(std::lround(h / cfg.strides[l]));
        const int wl = static_cast<int>(std::lround(w / cfg.strides[l]));
        if (hl < 1 || wl < 1) throw ConfigError("build_pyramid: stride collapses the grid");
        Var base = resize_bilinear(projected, hl, wl);
        Var residual = reshape(params.level_fc[l](reshape(base, {t * hl * wl, cfg.dp})),
                               {t, hl, wl, cfg.dp});
        pyr.levels.push_back(add(base, residual));
        pyr.sizes.emplace_back(hl, wl);
    }
    return pyr;
}

}  // namespace openmixer::backend

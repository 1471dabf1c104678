// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "openmixer/common.hpp"
#include "openmixer/eval.hpp"
#include "openmixer/palette.hpp"
#include "openmixer/tensor.hpp"
#include "openmixer/types.hpp"

namespace openmixer::data {

// One actor through one video; boxes in absolute pixels, frames contiguous.
struct AnnotatedTube {
    std::string class_name;
    std::vector<std::pair<int, Rect>> frames;
};

struct AnnotationRecord {
    std::string video_id;
    int frame_count = 0;
    int width = 0;
    int height = 0;
    std::string split_tag;  // train or test
    std::vector<AnnotatedTube> tubes;

    void validate() const {
        if (frame_count < 1 || width < 1 || height < 1)
            throw ValidationError("annotation " + video_id + ": bad dimensions");
        for (const auto& tube : tubes) {
            if (tube.frames.empty())
                throw ValidationError("annotation " + video_id + ": empty tube");
            for (std::size_t i = 0; i < tube.frames.size(); ++i) {
                const auto& [f, box] = tube.frames[i];
                if (i > 0 && f != tube.frames[i - 1].first + 1)
                    throw ValidationError("annotation " + video_id + ": tube frames not contiguous");
                if (f < 0 || f >= frame_count)
                    throw ValidationError("annotation " + video_id + ": frame index out of range");
                if (box.x1 < 0 || box.y1 < 0 || box.x2 > width || box.y2 > height ||
                    box.x1 >= box.x2 || box.y1 >= box.y2)
                    throw ValidationError("annotation " + video_id + ": box outside frame bounds");
            }
        }
    }
};

enum class SplitRatio { half, three_quarter };

inline double split_ratio_value(SplitRatio r) {
    return r == SplitRatio::half ? 0.5 : 0.75;
}

struct SplitSpec {
    std::string dataset;
    SplitRatio ratio = SplitRatio::half;
    std::uint64_t seed = 0;
    std::vector<std::string> base_classes;
    std::vector<std::string> novel_classes;

    bool is_novel(const std::string& cls) const {
        return std::find(novel_classes.begin(), novel_classes.end(), cls) != novel_classes.end();
    }

    void validate() const {
        std::set<std::string> base(base_classes.begin(), base_classes.end());
        std::set<std::string> novel(novel_classes.begin(), novel_classes.end());
        if (base.size() != base_classes.size() || novel.size() != novel_classes.size())
            throw ValidationError("split: duplicate class within a partition");
        for (const auto& c : base)
            if (novel.count(c)) throw ValidationError("split: class in both partitions: " + c);
    }
};

// Seeded shuffle, then prefix split with the base count floored: 21 classes at
// 50/50 give 10 base and 11 novel, 24 give 12 and 12.
inline SplitSpec make_split(const std::vector<std::string>& classes, SplitRatio ratio,
                            std::uint64_t seed, const std::string& dataset = "dataset") {
    if (classes.size() < 2) throw InputError("make_split: need at least two classes");
    if (std::set<std::string>(classes.begin(), classes.end()).size() != classes.size())
        throw InputError("make_split: duplicate class names");
    std::vector<std::string> order = classes;
    Rng rng(seed);
    rng.shuffle(order);
    const auto base_count = static_cast<std::size_t>(
        split_ratio_value(ratio) * static_cast<double>(classes.size()));
    SplitSpec spec;
    spec.dataset = dataset;
    spec.ratio = ratio;
    spec.seed = seed;
    spec.base_classes.assign(order.begin(), order.begin() + static_cast<long>(base_count));
    spec.novel_classes.assign(order.begin() + static_cast<long>(base_count), order.end());
    std::sort(spec.base_classes.begin(), spec.base_classes.end());
    std::sort(spec.novel_classes.begin(), spec.novel_classes.end());
    spec.validate();
    return spec;
}

// T consecutive frames at the stride, centered on the keyframe, replicating
// edge frames so the window always has exactly T entries.
inline VideoClip sample_frames(const Tensor& video, double frame_rate, int keyframe, int t = 16,
                               int stride = 1) {
    if (video.ndim() != 4 || video.dim(3) != 3)
        throw InputError("sample_frames: video must be [T,H,W,3]");
    const int total = video.dim(0);
    if (total < 1) throw InputError("sample_frames: empty video");
    if (keyframe < 0 || keyframe >= total) throw InputError("sample_frames: keyframe out of range");
    if (t < 1 || stride < 1) throw InputError("sample_frames: bad window");
    const int h = video.dim(1), w = video.dim(2);
    VideoClip clip;
    clip.frames = Tensor({t, h, w, 3});
    clip.frame_rate = frame_rate;
    clip.keyframe_index = t / 2;
    const std::size_t frame_elems = static_cast<std::size_t>(h) * w * 3;
    for (int i = 0; i < t; ++i) {
        int src = keyframe + (i - t / 2) * stride;
        src = std::max(0, std::min(total - 1, src));
        std::copy_n(video.raw().begin() + static_cast<long>(src * frame_elems), frame_elems,
                    clip.frames.raw().begin() + static_cast<long>(i) * static_cast<long>(frame_elems));
    }
    return clip;
}

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void require_token(const std::string& s, const char* what) {
    if (s.empty() || s.find_first_of(" \t\n\r") != std::string::npos)
        throw InputError(std::string("invalid ") + what + ": '" + s + "'");
}

inline std::ifstream open_for_read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open file: " + path);
    return in;
}

inline std::ofstream open_for_write(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write file: " + path);
    return out;
}

inline void expect_header(std::istream& in, const std::string& want, const std::string& path) {
    std::string line;
    if (!std::getline(in, line) || line != want)
        throw InputError(path + ": missing header '" + want + "'");
}

}  // namespace detail

inline void save_annotations(const std::string& path,
                             const std::vector<AnnotationRecord>& records) {
    auto out = detail::open_for_write(path);
    out << "openmixer-annotations v1\n";
    for (const auto& r : records) {
        r.validate();
        detail::require_token(r.video_id, "video id");
        detail::require_token(r.split_tag, "split tag");
        out << "video " << r.video_id << ' ' << r.frame_count << ' ' << r.width << ' ' << r.height
            << ' ' << r.split_tag << '\n';
        for (const auto& tube : r.tubes) {
            detail::require_token(tube.class_name, "class name");
            out << "tube " << tube.class_name << ' ' << tube.frames.size() << '\n';
            for (const auto& [f, b] : tube.frames)
                out << f << ' ' << detail::fmt_double(b.x1) << ' ' << detail::fmt_double(b.y1)
                    << ' ' << detail::fmt_double(b.x2) << ' ' << detail::fmt_double(b.y2) << '\n';
        }
        out << "end\n";
    }
}

inline std::vector<AnnotationRecord> load_annotations(const std::string& path) {
    auto in = detail::open_for_read(path);
    detail::expect_header(in, "openmixer-annotations v1", path);
    std::vector<AnnotationRecord> records;
    std::string word;
    while (in >> word) {
        if (word != "video") throw InputError(path + ": expected 'video', got '" + word + "'");
        AnnotationRecord r;
        if (!(in >> r.video_id >> r.frame_count >> r.width >> r.height >> r.split_tag))
            throw InputError(path + ": truncated video line");
        while (in >> word && word == "tube") {
            AnnotatedTube tube;
            std::size_t n = 0;
            if (!(in >> tube.class_name >> n)) throw InputError(path + ": truncated tube line");
            for (std::size_t i = 0; i < n; ++i) {
                int f = 0;
                Rect b;
                if (!(in >> f >> b.x1 >> b.y1 >> b.x2 >> b.y2))
                    throw InputError(path + ": truncated tube frames");
                tube.frames.emplace_back(f, b);
            }
            r.tubes.push_back(std::move(tube));
        }
        if (word != "end") throw InputError(path + ": expected 'end'");
        r.validate();
        records.push_back(std::move(r));
    }
    return records;
}

inline void save_split(const std::string& path, const SplitSpec& spec) {
    spec.validate();
    auto out = detail::open_for_write(path);
    out << "openmixer-split v1\n";
    detail::require_token(spec.dataset, "dataset name");
    out << "dataset " << spec.dataset << '\n';
    out << "ratio " << (spec.ratio == SplitRatio::half ? "50/50" : "75/25") << '\n';
    out << "seed " << spec.seed << '\n';
    for (const auto& c : spec.base_classes) {
        detail::require_token(c, "class name");
        out << "base " << c << '\n';
    }
    for (const auto& c : spec.novel_classes) {
        detail::require_token(c, "class name");
        out << "novel " << c << '\n';
    }
}

inline SplitSpec load_split(const std::string& path) {
    auto in = detail::open_for_read(path);
    detail::expect_header(in, "openmixer-split v1", path);
    SplitSpec spec;
    std::string word;
    while (in >> word) {
        if (word == "dataset") {
            in >> spec.dataset;
        } else if (word == "ratio") {
            std::string r;
            in >> r;
            if (r == "50/50")
                spec.ratio = SplitRatio::half;
            else if (r == "75/25")
                spec.ratio = SplitRatio::three_quarter;
            else
                throw InputError(path + ": unknown ratio '" + r + "'");
        } else if (word == "seed") {
            in >> spec.seed;
        } else if (word == "base") {
            std::string c;
            in >> c;
            spec.base_classes.push_back(c);
        } else if (word == "novel") {
            std::string c;
            in >> c;
            spec.novel_classes.push_back(c);
        } else {
            throw InputError(path + ": unknown key '" + word + "'");
        }
    }
    spec.validate();
    return spec;
}

// Detection rows use normalized [0,1] coordinates, the model's native space;
// one schema for both internal output and externally supplied boxes.
inline void save_detections(const std::string& path, const std::vector<Detection>& detections,
                            const std::vector<std::string>& class_names) {
    auto out = detail::open_for_write(path);
    out << "openmixer-detections v1\n";
    for (const auto& d : detections) {
        if (d.class_index < 0 || d.class_index >= static_cast<int>(class_names.size()))
            throw InputError("save_detections: class index out of range");
        detail::require_token(d.video_id, "video id");
        out << d.video_id << ' ' << d.frame_index << ' '
            << class_names[static_cast<std::size_t>(d.class_index)] << ' '
            << detail::fmt_double(d.score) << ' ' << detail::fmt_double(d.box.x1) << ' '
            << detail::fmt_double(d.box.y1) << ' ' << detail::fmt_double(d.box.x2) << ' '
            << detail::fmt_double(d.box.y2) << '\n';
    }
}

inline std::vector<Detection> load_detections(const std::string& path,
                                              const std::vector<std::string>& class_names) {
    auto in = detail::open_for_read(path);
    detail::expect_header(in, "openmixer-detections v1", path);
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < class_names.size(); ++i)
        index[class_names[i]] = static_cast<int>(i);
    std::vector<Detection> out;
    std::string video, cls;
    Detection d;
    while (in >> video >> d.frame_index >> cls >> d.score >> d.box.x1 >> d.box.y1 >> d.box.x2 >>
           d.box.y2) {
        const auto it = index.find(cls);
        if (it == index.end()) throw ValidationError(path + ": unknown class '" + cls + "'");
        d.video_id = video;
        d.class_index = it->second;
        out.push_back(d);
    }
    if (!in.eof()) throw InputError(path + ": malformed detection row");
    return out;
}

// Prompt files are JSON objects mapping class name to one sentence or a list
// of sentences. Keys must be unique and drawn from the known vocabulary.
inline std::map<std::string, std::vector<std::string>> load_prompts(
    const std::string& path, const std::vector<std::string>& known_classes) {
    auto in = detail::open_for_read(path);
    std::stringstream buf;
    buf << in.rdbuf();
    std::vector<std::string> keys;
    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(
            buf.str(), [&](int depth, nlohmann::json::parse_event_t ev, nlohmann::json& value) {
                if (ev == nlohmann::json::parse_event_t::key && depth == 1)
                    keys.push_back(value.get<std::string>());
                return true;
            });
    } catch (const nlohmann::json::exception& e) {
        throw InputError(path + ": " + e.what());
    }
    if (!parsed.is_object()) throw InputError(path + ": prompt file must be a JSON object");
    std::set<std::string> seen;
    for (const auto& k : keys)
        if (!seen.insert(k).second)
            throw ValidationError(path + ": duplicate class key '" + k + "'");

    const std::set<std::string> known(known_classes.begin(), known_classes.end());
    std::vector<std::string> offenders;
    std::map<std::string, std::vector<std::string>> prompts;
    for (const auto& [cls, value] : parsed.items()) {
        if (!known.count(cls)) {
            offenders.push_back(cls);
            continue;
        }
        std::vector<std::string> sentences;
        if (value.is_string()) {
            sentences.push_back(value.get<std::string>());
        } else if (value.is_array()) {
            for (const auto& s : value) {
                if (!s.is_string()) throw InputError(path + ": prompt entries must be strings");
                sentences.push_back(s.get<std::string>());
            }
        } else {
            throw InputError(path + ": prompt value must be a string or list of strings");
        }
        if (sentences.empty()) throw InputError(path + ": empty prompt list for '" + cls + "'");
        prompts[cls] = std::move(sentences);
    }
    if (!offenders.empty()) {
        std::string msg = path + ": unknown classes:";
        for (const auto& c : offenders) msg += " " + c;
        throw ValidationError(msg);
    }
    return prompts;
}

inline void save_prompts(const std::string& path,
                         const std::map<std::string, std::vector<std::string>>& prompts) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [cls, sentences] : prompts) {
        if (sentences.size() == 1)
            j[cls] = sentences[0];
        else
            j[cls] = sentences;
    }
    auto out = detail::open_for_write(path);
    out << j.dump(2) << '\n';
}

// Raw clip container: magic, dimensions, frame rate, keyframe, float32 pixels.
inline void save_clip(const std::string& path, const VideoClip& clip) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write file: " + path);
    out.write("OMVCLIP1", 8);
    const std::int32_t dims[4] = {clip.t(), clip.h(), clip.w(), 3};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    out.write(reinterpret_cast<const char*>(&clip.frame_rate), sizeof clip.frame_rate);
    const std::int32_t kf = clip.keyframe_index;
    out.write(reinterpret_cast<const char*>(&kf), sizeof kf);
    std::vector<float> pixels(clip.frames.raw().begin(), clip.frames.raw().end());
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<long>(pixels.size() * sizeof(float)));
}

inline VideoClip load_clip(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open file: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != "OMVCLIP1") throw InputError(path + ": bad clip magic");
    std::int32_t dims[4];
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    VideoClip clip;
    in.read(reinterpret_cast<char*>(&clip.frame_rate), sizeof clip.frame_rate);
    std::int32_t kf = 0;
    in.read(reinterpret_cast<char*>(&kf), sizeof kf);
    clip.keyframe_index = kf;
    if (!in || dims[0] < 1 || dims[1] < 1 || dims[2] < 1 || dims[3] != 3)
        throw InputError(path + ": bad clip dimensions");
    clip.frames = Tensor({dims[0], dims[1], dims[2], 3});
    std::vector<float> pixels(clip.frames.numel());
    in.read(reinterpret_cast<char*>(pixels.data()), static_cast<long>(pixels.size() * sizeof(float)));
    if (!in) throw InputError(path + ": truncated clip payload");
    std::copy(pixels.begin(), pixels.end(), clip.frames.raw().begin());
    return clip;
}

struct SyntheticConfig {
    int num_classes = 3;      // one (color, motion) pair per class
    int clips_per_class = 4;
    int frames = 24;
    int width = 64;
    int height = 64;
    int rect_size = 16;
    double frame_rate = 8.0;
    double train_fraction = 0.75;
};

struct SyntheticDataset {
    std::vector<AnnotationRecord> annotations;
    std::map<std::string, Tensor> clips;  // video_id -> [T,H,W,3]
    std::vector<std::string> class_names;
    std::map<std::string, std::vector<std::string>> prompts;
};

// Moving textured colored rectangles on a static textured gray background.
// Class k pairs palette color k with motion pattern k mod 4; every frame is
// annotated, so ground-truth tubes span the whole clip.
inline SyntheticDataset generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
    const auto& colors = palette_colors();
    const auto& motions = palette_motions();
    if (cfg.num_classes < 1 || cfg.num_classes > static_cast<int>(colors.size()))
        throw InputError("generate_synthetic: num_classes must be in [1, palette size]");
    if (cfg.clips_per_class < 1 || cfg.frames < 2) throw InputError("generate_synthetic: too small");
    if (cfg.rect_size < 4 || cfg.rect_size * 2 > std::min(cfg.width, cfg.height))
        throw InputError("generate_synthetic: rectangle does not fit");

    Rng rng(seed);
    SyntheticDataset ds;
    for (int c = 0; c < cfg.num_classes; ++c) {
        const auto& color = colors[static_cast<std::size_t>(c)];
        const auto& motion = motions[static_cast<std::size_t>(c % static_cast<int>(motions.size()))];
        const std::string cls = std::string(color.word) + "_" + motion.word;
        ds.class_names.push_back(cls);
        ds.prompts[cls] = {std::string("a video of a ") + color.word + " square that " +
                           motion.phrase};

        const int train_count =
            static_cast<int>(cfg.train_fraction * static_cast<double>(cfg.clips_per_class));
        for (int k = 0; k < cfg.clips_per_class; ++k) {
            char suffix[16];
            std::snprintf(suffix, sizeof suffix, "_%03d", k);
            const std::string video_id = cls + suffix;

            // static gray texture
            Tensor video({cfg.frames, cfg.height, cfg.width, 3});
            Tensor background({cfg.height, cfg.width});
            for (int y = 0; y < cfg.height; ++y)
                for (int x = 0; x < cfg.width; ++x) background.at(y, x) = 0.40 + 0.20 * rng.uniform();
            // rectangle texture rides along with the rectangle
            Tensor rect_noise({cfg.rect_size, cfg.rect_size});
            for (int y = 0; y < cfg.rect_size; ++y)
                for (int x = 0; x < cfg.rect_size; ++x)
                    rect_noise.at(y, x) = 0.10 * rng.uniform() - 0.05;

            double px = 2.0 + rng.uniform() * (cfg.width - cfg.rect_size - 4);
            double py = 2.0 + rng.uniform() * (cfg.height - cfg.rect_size - 4);
            double vx = motion.vx, vy = motion.vy;

            AnnotationRecord rec;
            rec.video_id = video_id;
            rec.frame_count = cfg.frames;
            rec.width = cfg.width;
            rec.height = cfg.height;
            rec.split_tag = k < train_count ? "train" : "test";
            AnnotatedTube tube;
            tube.class_name = cls;

            const double ch[3] = {color.r, color.g, color.b};
            for (int t = 0; t < cfg.frames; ++t) {
                const int ix = static_cast<int>(px + 0.5);
                const int iy = static_cast<int>(py + 0.5);
                for (int y = 0; y < cfg.height; ++y)
                    for (int x = 0; x < cfg.width; ++x) {
                        const bool inside = x >= ix && x < ix + cfg.rect_size && y >= iy &&
                                            y < iy + cfg.rect_size;
                        for (int ci = 0; ci < 3; ++ci) {
                            double v = inside ? ch[ci] + rect_noise.at(y - iy, x - ix)
                                              : background.at(y, x);
                            video.at(t, y, x, ci) = std::min(1.0, std::max(0.0, v));
                        }
                    }
                tube.frames.emplace_back(
                    t, Rect{static_cast<double>(ix), static_cast<double>(iy),
                            static_cast<double>(ix + cfg.rect_size),
                            static_cast<double>(iy + cfg.rect_size)});
                px += vx;
                py += vy;
                if (px < 1.0 || px > cfg.width - cfg.rect_size - 1.0) {
                    vx = -vx;
                    px += 2.0 * vx;
                }
                if (py < 1.0 || py > cfg.height - cfg.rect_size - 1.0) {
                    vy = -vy;
                    py += 2.0 * vy;
                }
            }
            rec.tubes.push_back(std::move(tube));
            rec.validate();
            ds.annotations.push_back(std::move(rec));
            ds.clips[video_id] = std::move(video);
        }
    }
    return ds;
}

// Ground-truth tubes in normalized coordinates for the eval module.
inline std::vector<eval::GroundTruthTube> to_gt_tubes(
    const std::vector<AnnotationRecord>& records, const std::vector<std::string>& class_names) {
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < class_names.size(); ++i)
        index[class_names[i]] = static_cast<int>(i);
    std::vector<eval::GroundTruthTube> out;
    for (const auto& r : records) {
        for (const auto& tube : r.tubes) {
            const auto it = index.find(tube.class_name);
            if (it == index.end())
                throw ValidationError("annotation class not in vocabulary: " + tube.class_name);
            eval::GroundTruthTube t;
            t.video_id = r.video_id;
            t.class_index = it->second;
            for (const auto& [f, b] : tube.frames)
                t.frames.emplace_back(f, b.scaled(1.0 / r.width, 1.0 / r.height));
            out.push_back(std::move(t));
        }
    }
    return out;
}

}  // namespace openmixer::data

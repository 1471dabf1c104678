// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <string>
#include <vector>

#include "openmixer/tensor.hpp"

namespace openmixer {

// Axis-aligned box in (cx, cy, w, h) form, normalized frame coordinates.
struct Box {
    double cx = 0.5, cy = 0.5, w = 1.0, h = 1.0;

    double x1() const { return cx - 0.5 * w; }
    double y1() const { return cy - 0.5 * h; }
    double x2() const { return cx + 0.5 * w; }
    double y2() const { return cy + 0.5 * h; }
    double area() const { return w * h; }
};

// Corner-form box, used on the evaluation side where ground truth and
// detection files speak absolute pixels.
struct Rect {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }

    static Rect from_box(const Box& b) { return Rect{b.x1(), b.y1(), b.x2(), b.y2()}; }

    Box to_box() const {
        return Box{0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
    }

    Rect scaled(double sx, double sy) const { return Rect{x1 * sx, y1 * sy, x2 * sx, y2 * sy}; }
};

inline double rect_iou(const Rect& a, const Rect& b) {
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

// Candidate person boxes for the N queries at one cascade stage.
struct BoxSet {
    std::vector<Box> boxes;
    std::vector<double> person_scores;  // probabilities in [0,1]
    int stage = 0;

    int size() const { return static_cast<int>(boxes.size()); }

    void validate() const {
        if (boxes.size() != person_scores.size())
            throw ValidationError("BoxSet: boxes/scores length mismatch");
        for (const Box& b : boxes) {
            if (b.cx < 0.0 || b.cx > 1.0 || b.cy < 0.0 || b.cy > 1.0)
                throw ValidationError("BoxSet: center outside [0,1]");
            if (b.w <= 0.0 || b.w > 1.0 || b.h <= 0.0 || b.h > 1.0)
                throw ValidationError("BoxSet: size outside (0,1]");
        }
        for (double s : person_scores)
            if (s < 0.0 || s > 1.0) throw ValidationError("BoxSet: score outside [0,1]");
    }
};

// A fixed-length window of video frames, pixel intensities in [0,1].
struct VideoClip {
    Tensor frames;  // [T,H,W,3]
    double frame_rate = 25.0;
    int keyframe_index = -1;  // negative means "use the middle frame"
    std::string video_id;

    int t() const { return frames.dim(0); }
    int h() const { return frames.dim(1); }
    int w() const { return frames.dim(2); }
    int keyframe() const { return keyframe_index >= 0 ? keyframe_index : t() / 2; }
};

// One detection row: the unit shared by model output, external detection
// files and the evaluator.
struct Detection {
    std::string video_id;
    int frame_index = 0;
    int class_index = 0;
    double score = 0.0;
    Rect box;
};

}  // namespace openmixer

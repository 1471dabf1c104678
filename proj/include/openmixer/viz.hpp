// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "openmixer/common.hpp"
#include "openmixer/tensor.hpp"
#include "openmixer/types.hpp"

namespace openmixer::viz {

struct Color {
    unsigned char r = 0, g = 0, b = 0;
};

// Detections render blue, ground truth yellow.
inline constexpr Color kDetectionColor{60, 90, 255};
inline constexpr Color kGroundTruthColor{255, 220, 40};

struct Image {
    int width = 0;
    int height = 0;
    std::vector<unsigned char> rgb;  // row-major, 3 bytes per pixel

    static Image blank(int w, int h, Color fill = {0, 0, 0}) {
        if (w < 1 || h < 1) throw InputError("Image: non-positive size");
        Image im;
        im.width = w;
        im.height = h;
        im.rgb.resize(static_cast<std::size_t>(w) * h * 3);
        for (std::size_t i = 0; i < im.rgb.size(); i += 3) {
            im.rgb[i] = fill.r;
            im.rgb[i + 1] = fill.g;
            im.rgb[i + 2] = fill.b;
        }
        return im;
    }

    void set(int x, int y, Color c) {
        if (x < 0 || y < 0 || x >= width || y >= height) return;
        const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
        rgb[i] = c.r;
        rgb[i + 1] = c.g;
        rgb[i + 2] = c.b;
    }

    Color get(int x, int y) const {
        if (x < 0 || y < 0 || x >= width || y >= height)
            throw InputError("Image::get: out of bounds");
        const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
        return {rgb[i], rgb[i + 1], rgb[i + 2]};
    }
};

// One frame of a [T,H,W,3] clip, values clamped from [0,1] to bytes.
inline Image frame_image(const Tensor& video, int frame) {
    if (video.ndim() != 4 || video.dim(3) != 3) throw InputError("frame_image: need [T,H,W,3]");
    if (frame < 0 || frame >= video.dim(0)) throw InputError("frame_image: frame out of range");
    const int h = video.dim(1), w = video.dim(2);
    Image im = Image::blank(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(video.at(frame, y, x, c), 0.0, 1.0);
                im.rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
    return im;
}

// Hollow rectangle; the rect is in pixel coordinates and gets clipped.
inline void draw_rect(Image& im, const Rect& r, Color c, int thickness = 1) {
    const int x1 = static_cast<int>(std::lround(r.x1));
    const int y1 = static_cast<int>(std::lround(r.y1));
    const int x2 = static_cast<int>(std::lround(r.x2));
    const int y2 = static_cast<int>(std::lround(r.y2));
    for (int t = 0; t < thickness; ++t) {
        for (int x = x1; x <= x2; ++x) {
            im.set(x, y1 + t, c);
            im.set(x, y2 - t, c);
        }
        for (int y = y1; y <= y2; ++y) {
            im.set(x1 + t, y, c);
            im.set(x2 - t, y, c);
        }
    }
}

namespace detail {

// 5x7 glyphs, one byte per row, bit 4 the leftmost column. Lowercase letters,
// digits and the punctuation captions need; anything else renders as a box.
inline const std::map<char, std::array<std::uint8_t, 7>>& font() {
    static const std::map<char, std::array<std::uint8_t, 7>> table = {
        {'a', {0x00, 0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F}},
        {'b', {0x10, 0x10, 0x16, 0x19, 0x11, 0x19, 0x16}},
        {'c', {0x00, 0x00, 0x0E, 0x10, 0x10, 0x11, 0x0E}},
        {'d', {0x01, 0x01, 0x0D, 0x13, 0x11, 0x13, 0x0D}},
        {'e', {0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E}},
        {'f', {0x06, 0x09, 0x08, 0x1C, 0x08, 0x08, 0x08}},
        {'g', {0x00, 0x0F, 0x11, 0x11, 0x0F, 0x01, 0x0E}},
        {'h', {0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x11}},
        {'i', {0x04, 0x00, 0x0C, 0x04, 0x04, 0x04, 0x0E}},
        {'j', {0x02, 0x00, 0x06, 0x02, 0x02, 0x12, 0x0C}},
        {'k', {0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12}},
        {'l', {0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'m', {0x00, 0x00, 0x1A, 0x15, 0x15, 0x15, 0x15}},
        {'n', {0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11}},
        {'o', {0x00, 0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E}},
        {'p', {0x00, 0x00, 0x16, 0x19, 0x1E, 0x10, 0x10}},
        {'q', {0x00, 0x00, 0x0D, 0x13, 0x0F, 0x01, 0x01}},
        {'r', {0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10}},
        {'s', {0x00, 0x00, 0x0F, 0x10, 0x0E, 0x01, 0x1E}},
        {'t', {0x08, 0x08, 0x1C, 0x08, 0x08, 0x09, 0x06}},
        {'u', {0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0D}},
        {'v', {0x00, 0x00, 0x11, 0x11, 0x11, 0x0A, 0x04}},
        {'w', {0x00, 0x00, 0x11, 0x15, 0x15, 0x15, 0x0A}},
        {'x', {0x00, 0x00, 0x11, 0x0A, 0x04, 0x0A, 0x11}},
        {'y', {0x00, 0x00, 0x11, 0x11, 0x0F, 0x01, 0x0E}},
        {'z', {0x00, 0x00, 0x1F, 0x02, 0x04, 0x08, 0x1F}},
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
        {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
        {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
        {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
        {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
        {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {':', {0x00, 0x04, 0x04, 0x00, 0x04, 0x04, 0x00}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x06, 0x06}},
        {'-', {0x00, 0x00, 0x00, 0x0E, 0x00, 0x00, 0x00}},
        {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
        {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    };
    return table;
}

inline const std::array<std::uint8_t, 7>& glyph(char c) {
    static const std::array<std::uint8_t, 7> box = {0x1F, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1F};
    const auto& f = font();
    const auto it = f.find(c);
    return it == f.end() ? box : it->second;
}

}  // namespace detail

inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;
inline constexpr int kGlyphAdvance = 6;

inline void draw_text(Image& im, int x, int y, const std::string& text, Color c) {
    for (char ch : text) {
        const auto& g = detail::glyph(ch);
        for (int row = 0; row < kGlyphHeight; ++row)
            for (int col = 0; col < kGlyphWidth; ++col)
                if (g[static_cast<std::size_t>(row)] & (1u << (kGlyphWidth - 1 - col)))
                    im.set(x + col, y + row, c);
        x += kGlyphAdvance;
    }
}

// "class: 0.87"; the score prints with two decimals as in the overlays.
inline std::string caption_text(const std::string& class_name, double score) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", score);
    return class_name + ": " + buf;
}

struct Overlay {
    Rect box;  // normalized corners
    std::string caption;
    Color color;
};

// One rendered frame: the raw pixels with hollow boxes and captions just
// above each box (clamped into the image when the box touches the top).
inline Image render_frame(const Tensor& video, int frame, const std::vector<Overlay>& overlays) {
    Image im = frame_image(video, frame);
    for (const auto& ov : overlays) {
        const Rect px = ov.box.scaled(im.width - 1, im.height - 1);
        draw_rect(im, px, ov.color);
        if (!ov.caption.empty()) {
            const int ty = std::max(0, static_cast<int>(std::lround(px.y1)) - kGlyphHeight - 1);
            draw_text(im, std::max(0, static_cast<int>(std::lround(px.x1))), ty, ov.caption,
                      ov.color);
        }
    }
    return im;
}

inline void save_ppm(const std::string& path, const Image& im) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write image: " + path);
    out << "P6\n" << im.width << ' ' << im.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(im.rgb.data()), static_cast<long>(im.rgb.size()));
    if (!out) throw InputError("image write failed: " + path);
}

inline Image load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open image: " + path);
    std::string magic;
    int w = 0, h = 0, maxv = 0;
    in >> magic >> w >> h >> maxv;
    if (magic != "P6" || w < 1 || h < 1 || maxv != 255)
        throw ValidationError(path + ": not a P6/255 image");
    in.get();  // single whitespace after the header
    Image im = Image::blank(w, h);
    in.read(reinterpret_cast<char*>(im.rgb.data()), static_cast<long>(im.rgb.size()));
    if (!in) throw InputError(path + ": truncated image payload");
    return im;
}

}  // namespace openmixer::viz

// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <array>
#include <string>
#include <vector>

namespace openmixer {

// Shared color and motion vocabulary for the synthetic dataset and the toy
// encoder. The encoder recovers these words from prompt text, so the two
// sides must agree on spelling.
struct PaletteColor {
    const char* word;
    double r, g, b;
};

struct PaletteMotion {
    const char* word;     // appears in class names and prompts
    const char* phrase;   // prompt fragment
    double vx, vy;        // pixels per frame
};

inline const std::vector<PaletteColor>& palette_colors() {
    static const std::vector<PaletteColor> colors = {
        {"red", 0.90, 0.10, 0.10},    {"green", 0.10, 0.80, 0.15},
        {"blue", 0.10, 0.20, 0.90},   {"yellow", 0.90, 0.85, 0.10},
        {"magenta", 0.85, 0.10, 0.80}, {"cyan", 0.10, 0.80, 0.85},
        {"orange", 0.95, 0.55, 0.10}, {"purple", 0.50, 0.15, 0.85},
    };
    return colors;
}

inline const std::vector<PaletteMotion>& palette_motions() {
    static const std::vector<PaletteMotion> motions = {
        {"slide", "slides sideways", 1.8, 0.0},
        {"rise", "rises upward", 0.0, -1.8},
        {"drift", "drifts diagonally", 1.3, 1.3},
        {"weave", "weaves across", 2.2, -0.7},
    };
    return motions;
}

inline int palette_color_index(const std::string& word) {
    const auto& colors = palette_colors();
    for (std::size_t i = 0; i < colors.size(); ++i)
        if (word == colors[i].word) return static_cast<int>(i);
    return -1;
}

inline int palette_motion_index(const std::string& word) {
    const auto& motions = palette_motions();
    for (std::size_t i = 0; i < motions.size(); ++i)
        if (word == motions[i].word) return static_cast<int>(i);
    return -1;
}

}  // namespace openmixer

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "diffseg/errors.hpp"
#include "diffseg/image_io.hpp"

namespace diffseg {

// ---------------------------------------------------------------------------
// Minimal deterministic raster plotting for the report stage: solid-color
// drawing plus a 5x7 bitmap font (uppercase, digits, basic punctuation).
// Identical inputs yield byte-identical PNG files.

namespace plotdetail {

// Column-major 5x7 glyphs, least significant bit = top row.
inline const std::array<std::uint8_t, 5>* glyph(char ch) {
    using G = std::array<std::uint8_t, 5>;
    static const G digits[10] = {
        {0x3E, 0x51, 0x49, 0x45, 0x3E}, {0x00, 0x42, 0x7F, 0x40, 0x00},
        {0x42, 0x61, 0x51, 0x49, 0x46}, {0x21, 0x41, 0x45, 0x4B, 0x31},
        {0x18, 0x14, 0x12, 0x7F, 0x10}, {0x27, 0x45, 0x45, 0x45, 0x39},
        {0x3C, 0x4A, 0x49, 0x49, 0x30}, {0x01, 0x71, 0x09, 0x05, 0x03},
        {0x36, 0x49, 0x49, 0x49, 0x36}, {0x06, 0x49, 0x49, 0x29, 0x1E}};
    static const G upper[26] = {
        {0x7E, 0x11, 0x11, 0x11, 0x7E}, {0x7F, 0x49, 0x49, 0x49, 0x36},
        {0x3E, 0x41, 0x41, 0x41, 0x22}, {0x7F, 0x41, 0x41, 0x22, 0x1C},
        {0x7F, 0x49, 0x49, 0x49, 0x41}, {0x7F, 0x09, 0x09, 0x09, 0x01},
        {0x3E, 0x41, 0x49, 0x49, 0x7A}, {0x7F, 0x08, 0x08, 0x08, 0x7F},
        {0x00, 0x41, 0x7F, 0x41, 0x00}, {0x20, 0x40, 0x41, 0x3F, 0x01},
        {0x7F, 0x08, 0x14, 0x22, 0x41}, {0x7F, 0x40, 0x40, 0x40, 0x40},
        {0x7F, 0x02, 0x0C, 0x02, 0x7F}, {0x7F, 0x04, 0x08, 0x10, 0x7F},
        {0x3E, 0x41, 0x41, 0x41, 0x3E}, {0x7F, 0x09, 0x09, 0x09, 0x06},
        {0x3E, 0x41, 0x51, 0x21, 0x5E}, {0x7F, 0x09, 0x19, 0x29, 0x46},
        {0x46, 0x49, 0x49, 0x49, 0x31}, {0x01, 0x01, 0x7F, 0x01, 0x01},
        {0x3F, 0x40, 0x40, 0x40, 0x3F}, {0x1F, 0x20, 0x40, 0x20, 0x1F},
        {0x3F, 0x40, 0x38, 0x40, 0x3F}, {0x63, 0x14, 0x08, 0x14, 0x63},
        {0x07, 0x08, 0x70, 0x08, 0x07}, {0x61, 0x51, 0x49, 0x45, 0x43}};
    static const G space = {0x00, 0x00, 0x00, 0x00, 0x00};
    static const G dot = {0x00, 0x60, 0x60, 0x00, 0x00};
    static const G comma = {0x00, 0x50, 0x30, 0x00, 0x00};
    static const G minus = {0x08, 0x08, 0x08, 0x08, 0x08};
    static const G underscore = {0x40, 0x40, 0x40, 0x40, 0x40};
    static const G slash = {0x20, 0x10, 0x08, 0x04, 0x02};
    static const G colon = {0x00, 0x36, 0x36, 0x00, 0x00};
    static const G lparen = {0x00, 0x1C, 0x22, 0x41, 0x00};
    static const G rparen = {0x00, 0x41, 0x22, 0x1C, 0x00};
    static const G equals = {0x14, 0x14, 0x14, 0x14, 0x14};
    static const G plus = {0x08, 0x08, 0x3E, 0x08, 0x08};
    static const G percent = {0x23, 0x13, 0x08, 0x64, 0x62};

    char c = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    if (c >= '0' && c <= '9') return &digits[c - '0'];
    if (c >= 'A' && c <= 'Z') return &upper[c - 'A'];
    switch (c) {
        case ' ': return &space;
        case '.': return &dot;
        case ',': return &comma;
        case '-': return &minus;
        case '_': return &underscore;
        case '/': return &slash;
        case ':': return &colon;
        case '(': return &lparen;
        case ')': return &rparen;
        case '=': return &equals;
        case '+': return &plus;
        case '%': return &percent;
        default: return &space;
    }
}

inline std::string fmt3(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return std::string(buf);
}

}  // namespace plotdetail

struct rgb {
    std::uint8_t r = 0, g = 0, b = 0;
};

inline constexpr rgb plot_bg{250, 250, 248};
inline constexpr rgb plot_ink{40, 40, 40};
inline constexpr rgb plot_grid{210, 210, 210};
inline const std::vector<rgb>& plot_palette() {
    static const std::vector<rgb> p = {
        {70, 110, 180}, {200, 90, 60}, {70, 150, 90}, {160, 110, 190}, {190, 160, 50}};
    return p;
}

struct canvas {
    int h = 0, w = 0;
    std::vector<std::uint8_t> px;

    canvas(int hh, int ww, rgb bg = plot_bg) : h(hh), w(ww), px(static_cast<size_t>(hh) * ww * 3) {
        for (long i = 0; i < static_cast<long>(hh) * ww; ++i) {
            px[3 * i] = bg.r;
            px[3 * i + 1] = bg.g;
            px[3 * i + 2] = bg.b;
        }
    }

    void set(int x, int y, rgb c) {
        if (x < 0 || x >= w || y < 0 || y >= h) return;
        size_t i = (static_cast<size_t>(y) * w + x) * 3;
        px[i] = c.r;
        px[i + 1] = c.g;
        px[i + 2] = c.b;
    }

    void fill_rect(int x0, int y0, int x1, int y1, rgb c) {
        for (int y = std::max(0, y0); y <= std::min(h - 1, y1); ++y)
            for (int x = std::max(0, x0); x <= std::min(w - 1, x1); ++x) set(x, y, c);
    }

    void hline(int x0, int x1, int y, rgb c) { fill_rect(x0, y, x1, y, c); }
    void vline(int x, int y0, int y1, rgb c) { fill_rect(x, y0, x, y1, c); }

    void line(int x0, int y0, int x1, int y1, rgb c) {
        int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
        int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            set(x0, y0, c);
            if (x0 == x1 && y0 == y1) break;
            int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }

    static int text_width(const std::string& s, int scale = 1) {
        return static_cast<int>(s.size()) * 6 * scale - (s.empty() ? 0 : scale);
    }

    void text(int x, int y, const std::string& s, rgb c, int scale = 1) {
        int cx = x;
        for (char ch : s) {
            const auto* g = plotdetail::glyph(ch);
            for (int col = 0; col < 5; ++col)
                for (int row = 0; row < 7; ++row)
                    if ((*g)[static_cast<size_t>(col)] >> row & 1)
                        fill_rect(cx + col * scale, y + row * scale, cx + (col + 1) * scale - 1,
                                  y + (row + 1) * scale - 1, c);
            cx += 6 * scale;
        }
    }

    void save(const std::filesystem::path& path) const { write_png8_rgb(path.string(), px, h, w); }
};

// Bar chart with value labels, y axis from 0 to y_max (default: data maximum
// rounded up to a tidy step).
inline void bar_chart(const std::filesystem::path& path, const std::string& title,
                      const std::vector<std::string>& labels, const std::vector<double>& values,
                      double y_max = 0.0) {
    if (labels.size() != values.size() || labels.empty())
        throw validation_error("bar_chart: labels and values must align and be nonempty");
    if (y_max <= 0.0) {
        double top = *std::max_element(values.begin(), values.end());
        y_max = top <= 0.0 ? 1.0 : top * 1.15;
    }
    const int W = 560, H = 360, left = 56, right = 16, top = 36, bottom = 48;
    canvas cv(H, W);
    cv.text(left, 12, title, plot_ink);

    const int py0 = H - bottom, py1 = top;  // pixel rows for value 0 and y_max
    auto ypix = [&](double v) {
        return static_cast<int>(std::lround(py0 - (v / y_max) * (py0 - py1)));
    };
    for (int t = 0; t <= 4; ++t) {
        double v = y_max * t / 4.0;
        int y = ypix(v);
        cv.hline(left, W - right, y, plot_grid);
        std::string lab = plotdetail::fmt3(v);
        cv.text(left - 6 - canvas::text_width(lab), y - 3, lab, plot_ink);
    }
    cv.vline(left, py1, py0, plot_ink);
    cv.hline(left, W - right, py0, plot_ink);

    int nbars = static_cast<int>(values.size());
    int span = (W - left - right) / nbars;
    int bar_w = std::max(8, span * 3 / 5);
    for (int i = 0; i < nbars; ++i) {
        int cx = left + span * i + span / 2;
        int x0 = cx - bar_w / 2, x1 = x0 + bar_w - 1;
        int y = ypix(std::clamp(values[static_cast<size_t>(i)], 0.0, y_max));
        cv.fill_rect(x0, y, x1, py0 - 1, plot_palette()[static_cast<size_t>(i) %
                                                        plot_palette().size()]);
        std::string v = plotdetail::fmt3(values[static_cast<size_t>(i)]);
        cv.text(cx - canvas::text_width(v) / 2, y - 11, v, plot_ink);
        const std::string& lab = labels[static_cast<size_t>(i)];
        cv.text(cx - canvas::text_width(lab) / 2, py0 + 8, lab, plot_ink);
    }
    cv.save(path);
}

// Line chart over sample index (epoch number for loss curves); one colored
// polyline per named series plus a legend.
inline void line_chart(const std::filesystem::path& path, const std::string& title,
                       const std::vector<std::pair<std::string, std::vector<double>>>& series) {
    if (series.empty()) throw validation_error("line_chart: no series");
    size_t len = 0;
    double lo = 0.0, hi = 1.0;
    bool first = true;
    for (const auto& [name, ys] : series) {
        if (ys.empty()) throw validation_error("line_chart: empty series '" + name + "'");
        len = std::max(len, ys.size());
        for (double v : ys) {
            if (first || v < lo) lo = v;
            if (first || v > hi) hi = v;
            first = false;
        }
    }
    if (hi <= lo) hi = lo + 1.0;
    double pad = (hi - lo) * 0.08;
    lo -= pad;
    hi += pad;

    const int W = 560, H = 360, left = 64, right = 16, top = 36, bottom = 36;
    canvas cv(H, W);
    cv.text(left, 12, title, plot_ink);
    const int py0 = H - bottom, py1 = top;
    auto ypix = [&](double v) {
        return static_cast<int>(std::lround(py0 - (v - lo) / (hi - lo) * (py0 - py1)));
    };
    auto xpix = [&](size_t i) {
        return len <= 1 ? left
                        : left + static_cast<int>(static_cast<double>(i) * (W - left - right) /
                                                  static_cast<double>(len - 1));
    };
    for (int t = 0; t <= 4; ++t) {
        double v = lo + (hi - lo) * t / 4.0;
        int y = ypix(v);
        cv.hline(left, W - right, y, plot_grid);
        std::string lab = plotdetail::fmt3(v);
        cv.text(left - 6 - canvas::text_width(lab), y - 3, lab, plot_ink);
    }
    cv.vline(left, py1, py0, plot_ink);
    cv.hline(left, W - right, py0, plot_ink);

    for (size_t s = 0; s < series.size(); ++s) {
        rgb c = plot_palette()[s % plot_palette().size()];
        const auto& ys = series[s].second;
        for (size_t i = 1; i < ys.size(); ++i)
            cv.line(xpix(i - 1), ypix(ys[i - 1]), xpix(i), ypix(ys[i]), c);
        int ly = top + 4 + static_cast<int>(s) * 11;
        cv.fill_rect(W - right - 120, ly, W - right - 110, ly + 6, c);
        cv.text(W - right - 104, ly, series[s].first, plot_ink);
    }
    cv.save(path);
}

}  // namespace diffseg

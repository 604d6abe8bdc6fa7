#include "derain/plot.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>

namespace derain {
namespace {

// 5-wide, 7-tall glyphs; '#' = ink. Uppercase maps to lowercase, unknown
// characters render as a hollow box.
struct Glyph {
    char ch;
    const char* rows[7];
};

const Glyph kGlyphs[] = {
    {'0', {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."}},
    {'1', {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."}},
    {'2', {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"}},
    {'3', {".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."}},
    {'4', {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."}},
    {'5', {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."}},
    {'6', {".###.", "#....", "#....", "####.", "#...#", "#...#", ".###."}},
    {'7', {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."}},
    {'8', {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."}},
    {'9', {".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."}},
    {'a', {".....", ".....", ".###.", "....#", ".####", "#...#", ".####"}},
    {'b', {"#....", "#....", "####.", "#...#", "#...#", "#...#", "####."}},
    {'c', {".....", ".....", ".###.", "#....", "#....", "#...#", ".###."}},
    {'d', {"....#", "....#", ".####", "#...#", "#...#", "#...#", ".####"}},
    {'e', {".....", ".....", ".###.", "#...#", "#####", "#....", ".###."}},
    {'f', {"..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#..."}},
    {'g', {".....", ".####", "#...#", "#...#", ".####", "....#", ".###."}},
    {'h', {"#....", "#....", "####.", "#...#", "#...#", "#...#", "#...#"}},
    {'i', {"..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."}},
    {'j', {"...#.", ".....", "...#.", "...#.", "...#.", "#..#.", ".##.."}},
    {'k', {"#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."}},
    {'l', {".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."}},
    {'m', {".....", ".....", "##.#.", "#.#.#", "#.#.#", "#.#.#", "#.#.#"}},
    {'n', {".....", ".....", "####.", "#...#", "#...#", "#...#", "#...#"}},
    {'o', {".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."}},
    {'p', {".....", "####.", "#...#", "#...#", "####.", "#....", "#...."}},
    {'q', {".....", ".####", "#...#", "#...#", ".####", "....#", "....#"}},
    {'r', {".....", ".....", "#.##.", "##..#", "#....", "#....", "#...."}},
    {'s', {".....", ".....", ".####", "#....", ".###.", "....#", "####."}},
    {'t', {".#...", ".#...", "###..", ".#...", ".#...", ".#..#", "..##."}},
    {'u', {".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#"}},
    {'v', {".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#.."}},
    {'w', {".....", ".....", "#.#.#", "#.#.#", "#.#.#", "#.#.#", ".#.#."}},
    {'x', {".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"}},
    {'y', {".....", "#...#", "#...#", ".####", "....#", "#...#", ".###."}},
    {'z', {".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"}},
    {'.', {".....", ".....", ".....", ".....", ".....", ".##..", ".##.."}},
    {',', {".....", ".....", ".....", ".....", ".##..", "..#..", ".#..."}},
    {'-', {".....", ".....", ".....", "#####", ".....", ".....", "....."}},
    {'+', {".....", "..#..", "..#..", "#####", "..#..", "..#..", "....."}},
    {'_', {".....", ".....", ".....", ".....", ".....", ".....", "#####"}},
    {'/', {"....#", "...#.", "...#.", "..#..", ".#...", ".#...", "#...."}},
    {':', {".....", ".##..", ".##..", ".....", ".##..", ".##..", "....."}},
    {'(', {"...#.", "..#..", ".#...", ".#...", ".#...", "..#..", "...#."}},
    {')', {".#...", "..#..", "...#.", "...#.", "...#.", "..#..", ".#..."}},
    {'%', {"##..#", "##..#", "...#.", "..#..", ".#...", "#..##", "#..##"}},
    {'=', {".....", ".....", "#####", ".....", "#####", ".....", "....."}},
    {' ', {".....", ".....", ".....", ".....", ".....", ".....", "....."}},
};

const Glyph* find_glyph(char c) {
    const char lc = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (const Glyph& g : kGlyphs)
        if (g.ch == lc) return &g;
    return nullptr;
}

struct Canvas {
    Tensor img;

    Canvas(int h, int w) : img(3, h, w) { img.fill(1.0); }

    void px(int x, int y, const std::array<double, 3>& c) {
        if (x < 0 || x >= img.w || y < 0 || y >= img.h) return;
        for (int k = 0; k < 3; ++k) img.at(k, y, x) = c[k];
    }

    void line(double x0, double y0, double x1, double y1, const std::array<double, 3>& c) {
        const double dx = x1 - x0, dy = y1 - y0;
        const int steps = std::max(1, static_cast<int>(std::ceil(std::max(std::fabs(dx), std::fabs(dy)))));
        for (int i = 0; i <= steps; ++i) {
            const double t = static_cast<double>(i) / steps;
            px(static_cast<int>(std::lround(x0 + dx * t)),
               static_cast<int>(std::lround(y0 + dy * t)), c);
        }
    }

    void text(int x, int y, const std::string& s, const std::array<double, 3>& c, int scale = 1) {
        int cx = x;
        for (char ch : s) {
            const Glyph* g = find_glyph(ch);
            for (int r = 0; r < 7; ++r)
                for (int col = 0; col < 5; ++col) {
                    const bool ink = g ? g->rows[r][col] == '#'
                                       : (r == 0 || r == 6 || col == 0 || col == 4);
                    if (!ink) continue;
                    for (int sy = 0; sy < scale; ++sy)
                        for (int sx = 0; sx < scale; ++sx)
                            px(cx + col * scale + sx, y + r * scale + sy, c);
                }
            cx += 6 * scale;
        }
    }
};

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

} // namespace

std::array<double, 3> series_color(size_t index) {
    static const std::array<double, 3> palette[] = {
        {0.86, 0.20, 0.15}, {0.13, 0.38, 0.77}, {0.09, 0.59, 0.26},
        {0.85, 0.55, 0.05}, {0.48, 0.18, 0.62}, {0.05, 0.62, 0.62},
    };
    return palette[index % (sizeof(palette) / sizeof(palette[0]))];
}

Tensor render_line_chart(const std::string& title, const std::string& y_label,
                         const std::vector<PlotSeries>& series, int width, int height) {
    Canvas cv(height, width);
    const std::array<double, 3> black{0, 0, 0};
    const std::array<double, 3> grey{0.82, 0.82, 0.82};

    const int ml = 64, mr = 16, mt = 28, mb = 36; // margins
    const int x0 = ml, x1 = width - mr, y0 = height - mb, y1 = mt;

    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (const auto& [px, py] : s.points) {
            xmin = std::min(xmin, px);
            xmax = std::max(xmax, px);
            ymin = std::min(ymin, py);
            ymax = std::max(ymax, py);
        }
    if (xmin > xmax) {
        xmin = 0;
        xmax = 1;
        ymin = 0;
        ymax = 1;
    }
    if (xmax - xmin < 1e-12) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    const double ypad = std::max(1e-6, (ymax - ymin) * 0.08);
    ymin -= ypad;
    ymax += ypad;

    auto sx = [&](double x) { return x0 + (x - xmin) / (xmax - xmin) * (x1 - x0); };
    auto sy = [&](double y) { return y0 - (y - ymin) / (ymax - ymin) * (y0 - y1); };

    for (int i = 0; i <= 4; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 4.0;
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        cv.line(sx(xv), y1, sx(xv), y0, grey);
        cv.line(x0, sy(yv), x1, sy(yv), grey);
        cv.text(static_cast<int>(sx(xv)) - 8, y0 + 6, tick_label(xv), black);
        cv.text(4, static_cast<int>(sy(yv)) - 3, tick_label(yv), black);
    }
    cv.line(x0, y0, x1, y0, black);
    cv.line(x0, y0, x0, y1, black);
    cv.text(ml, 8, title, black);
    cv.text(4, y1 - 14, y_label, black);

    int legend_y = y1 + 6;
    for (size_t si = 0; si < series.size(); ++si) {
        const PlotSeries& s = series[si];
        for (size_t i = 1; i < s.points.size(); ++i)
            cv.line(sx(s.points[i - 1].first), sy(s.points[i - 1].second),
                    sx(s.points[i].first), sy(s.points[i].second), s.rgb);
        for (const auto& [px, py] : s.points) {
            cv.px(static_cast<int>(sx(px)), static_cast<int>(sy(py)), s.rgb);
            cv.px(static_cast<int>(sx(px)) + 1, static_cast<int>(sy(py)), s.rgb);
            cv.px(static_cast<int>(sx(px)), static_cast<int>(sy(py)) + 1, s.rgb);
        }
        const int lx = x1 - 140;
        cv.line(lx, legend_y + 3, lx + 18, legend_y + 3, s.rgb);
        cv.text(lx + 24, legend_y, s.label, black);
        legend_y += 12;
    }
    return cv.img;
}

} // namespace derain

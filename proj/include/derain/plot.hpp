#pragma once

#include <array>
#include <string>
#include <vector>

#include "derain/tensor.hpp"

namespace derain {

struct PlotSeries {
    std::string label;
    std::array<double, 3> rgb{0.0, 0.0, 0.0};
    std::vector<std::pair<double, double>> points; // (x, y)
};

// Self-contained line-chart renderer (axes, ticks, legend, 5x7 bitmap
// labels) returning an RGB tensor; save with write_png.
Tensor render_line_chart(const std::string& title, const std::string& y_label,
                         const std::vector<PlotSeries>& series, int width = 720,
                         int height = 480);

// Stable series colors.
std::array<double, 3> series_color(size_t index);

} // namespace derain

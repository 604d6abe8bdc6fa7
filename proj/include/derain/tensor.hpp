#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "derain/util.hpp"

namespace derain {

// Dense C x H x W array of doubles. Images are c=3 (RGB) or c=1, feature
// maps use whatever channel count the layer produces.
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_, double fill = 0.0)
        : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, fill) {}

    size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }

    double& at(int ci, int y, int x) {
        return v[(static_cast<size_t>(ci) * h + y) * w + x];
    }
    double at(int ci, int y, int x) const {
        return v[(static_cast<size_t>(ci) * h + y) * w + x];
    }

    double* channel(int ci) { return v.data() + static_cast<size_t>(ci) * h * w; }
    const double* channel(int ci) const { return v.data() + static_cast<size_t>(ci) * h * w; }

    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }

    std::string shape_str() const {
        return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
    }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.c, t.h, t.w); }

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw ValidationError(std::string(what) + ": shape mismatch " + a.shape_str() +
                              " vs " + b.shape_str());
}

} // namespace derain

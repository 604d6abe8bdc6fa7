#pragma once

#include <cstddef>
#include <cstring>
#include <vector>

namespace derain::kernels::detail {

// Copies a CxHxW tensor into a zero-padded (H+2)x(W+2) staging buffer so the
// 3x3 loops never branch on borders. Scratch is reused across calls.
inline const double* pad1(const double* in, int c, int h, int w,
                          std::vector<double>& scratch) {
    const int ph = h + 2, pw = w + 2;
    scratch.assign(static_cast<size_t>(c) * ph * pw, 0.0);
    for (int ci = 0; ci < c; ++ci) {
        const double* src = in + static_cast<size_t>(ci) * h * w;
        double* dst = scratch.data() + static_cast<size_t>(ci) * ph * pw;
        for (int y = 0; y < h; ++y)
            std::memcpy(dst + static_cast<size_t>(y + 1) * pw + 1,
                        src + static_cast<size_t>(y) * w, sizeof(double) * w);
    }
    return scratch.data();
}

inline std::vector<double>& pad_scratch() {
    thread_local std::vector<double> s;
    return s;
}

inline std::vector<double>& pad_scratch2() {
    thread_local std::vector<double> s;
    return s;
}

} // namespace derain::kernels::detail

#include "derain/kernels.hpp"

#include <cmath>
#include <cstddef>

#include "kernels_common.hpp"

namespace derain::kernels {
namespace {

using detail::pad1;
using detail::pad_scratch;

void conv3x3_fwd_scalar(const double* in, const double* w, const double* bias,
                        double* out, int in_c, int out_c, int h, int wd, int stride) {
    const int ph = h + 2, pw = wd + 2;
    const int oh = h / stride, ow = wd / stride;
    const double* pin = pad1(in, in_c, h, wd, pad_scratch());
    for (int oc = 0; oc < out_c; ++oc) {
        double* orow = out + static_cast<size_t>(oc) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double acc = bias ? bias[oc] : 0.0;
                const double* wk = w + static_cast<size_t>(oc) * in_c * 9;
                for (int ic = 0; ic < in_c; ++ic) {
                    const double* pch = pin + static_cast<size_t>(ic) * ph * pw;
                    for (int ky = 0; ky < 3; ++ky) {
                        const double* prow = pch + static_cast<size_t>(oy * stride + ky) * pw + ox * stride;
                        acc += wk[0] * prow[0];
                        acc += wk[1] * prow[1];
                        acc += wk[2] * prow[2];
                        wk += 3;
                    }
                }
                orow[static_cast<size_t>(oy) * ow + ox] = acc;
            }
        }
    }
}

void conv3x3_bwd_input_scalar(const double* gout, const double* w, double* gin,
                              int in_c, int out_c, int h, int wd, int stride) {
    const int oh = h / stride, ow = wd / stride;
    if (stride == 1) {
        // Full correlation of the padded output gradient with the flipped kernel.
        const int ph = h + 2, pw = wd + 2;
        const double* pg = pad1(gout, out_c, oh, ow, pad_scratch());
        for (int ic = 0; ic < in_c; ++ic) {
            double* grow = gin + static_cast<size_t>(ic) * h * wd;
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < wd; ++x) {
                    double acc = 0.0;
                    for (int oc = 0; oc < out_c; ++oc) {
                        const double* wk = w + (static_cast<size_t>(oc) * in_c + ic) * 9;
                        const double* pch = pg + static_cast<size_t>(oc) * ph * pw;
                        for (int ky = 0; ky < 3; ++ky) {
                            const double* prow = pch + static_cast<size_t>(y + ky) * pw + x;
                            acc += wk[8 - 3 * ky - 0] * prow[0];
                            acc += wk[8 - 3 * ky - 1] * prow[1];
                            acc += wk[8 - 3 * ky - 2] * prow[2];
                        }
                    }
                    grow[static_cast<size_t>(y) * wd + x] += acc;
                }
            }
        }
        return;
    }
    // Strided case: scatter each output-gradient element back to its taps.
    for (int oc = 0; oc < out_c; ++oc) {
        const double* gch = gout + static_cast<size_t>(oc) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const double g = gch[static_cast<size_t>(oy) * ow + ox];
                const double* wk = w + static_cast<size_t>(oc) * in_c * 9;
                for (int ic = 0; ic < in_c; ++ic) {
                    double* ich = gin + static_cast<size_t>(ic) * h * wd;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = oy * stride + ky - 1;
                        if (iy < 0 || iy >= h) {
                            wk += 3;
                            continue;
                        }
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = ox * stride + kx - 1;
                            if (ix >= 0 && ix < wd)
                                ich[static_cast<size_t>(iy) * wd + ix] += wk[kx] * g;
                        }
                        wk += 3;
                    }
                }
            }
        }
    }
}

void conv3x3_bwd_params_scalar(const double* gout, const double* in, double* gw,
                               double* gb, int in_c, int out_c, int h, int wd,
                               int stride) {
    const int ph = h + 2, pw = wd + 2;
    const int oh = h / stride, ow = wd / stride;
    const double* pin = pad1(in, in_c, h, wd, pad_scratch());
    for (int oc = 0; oc < out_c; ++oc) {
        const double* gch = gout + static_cast<size_t>(oc) * oh * ow;
        if (gb) {
            double acc = 0.0;
            for (size_t i = 0; i < static_cast<size_t>(oh) * ow; ++i) acc += gch[i];
            gb[oc] += acc;
        }
        for (int ic = 0; ic < in_c; ++ic) {
            const double* pch = pin + static_cast<size_t>(ic) * ph * pw;
            double* wk = gw + (static_cast<size_t>(oc) * in_c + ic) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    double acc = 0.0;
                    for (int oy = 0; oy < oh; ++oy) {
                        const double* grow = gch + static_cast<size_t>(oy) * ow;
                        const double* prow = pch + static_cast<size_t>(oy * stride + ky) * pw + kx;
                        if (stride == 1) {
                            for (int ox = 0; ox < ow; ++ox) acc += grow[ox] * prow[ox];
                        } else {
                            for (int ox = 0; ox < ow; ++ox) acc += grow[ox] * prow[ox * stride];
                        }
                    }
                    wk[3 * ky + kx] += acc;
                }
            }
        }
    }
}

void add_scalar(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
void sub_scalar(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}
void mul_scalar(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
void axpy_scalar(double a, const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}
void scale_scalar(double a, double* x, size_t n) {
    for (size_t i = 0; i < n; ++i) x[i] *= a;
}

double sum_scalar(const double* x, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}
double dot_scalar(const double* a, const double* b, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}
double sum_abs_scalar(const double* x, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += std::fabs(x[i]);
    return acc;
}
double sum_sq_scalar(const double* x, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += x[i] * x[i];
    return acc;
}
double sum_abs_diff_scalar(const double* a, const double* b, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += std::fabs(a[i] - b[i]);
    return acc;
}
double sum_sq_diff_scalar(const double* a, const double* b, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

void silu_fwd_scalar(const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x[i]));
        y[i] = x[i] * s;
    }
}
void silu_bwd_scalar(const double* x, const double* gy, double* gx, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x[i]));
        gx[i] += gy[i] * s * (1.0 + x[i] * (1.0 - s));
    }
}
void sigmoid_fwd_scalar(const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
}
void sigmoid_bwd_scalar(const double* y, const double* gy, double* gx, size_t n) {
    for (size_t i = 0; i < n; ++i) gx[i] += gy[i] * y[i] * (1.0 - y[i]);
}

} // namespace

const Backend& scalar_backend() {
    static const Backend table = {
        "scalar",
        conv3x3_fwd_scalar,
        conv3x3_bwd_input_scalar,
        conv3x3_bwd_params_scalar,
        add_scalar,
        sub_scalar,
        mul_scalar,
        axpy_scalar,
        scale_scalar,
        sum_scalar,
        dot_scalar,
        sum_abs_scalar,
        sum_sq_scalar,
        sum_abs_diff_scalar,
        sum_sq_diff_scalar,
        silu_fwd_scalar,
        silu_bwd_scalar,
        sigmoid_fwd_scalar,
        sigmoid_bwd_scalar,
    };
    return table;
}

} // namespace derain::kernels

// AVX2+FMA variants of the hot kernels (4-wide doubles). Transcendental
// entries reuse the scalar implementations; stride-2 backward passes run at
// reduced resolution and stay scalar as well.

#include "derain/kernels.hpp"

#ifdef DERAIN_WITH_AVX2

#include <immintrin.h>

#include <cmath>
#include <cstddef>

#include "kernels_common.hpp"

namespace derain::kernels {
namespace {

using detail::pad1;
using detail::pad_scratch;

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

void conv3x3_fwd_avx2(const double* in, const double* w, const double* bias,
                      double* out, int in_c, int out_c, int h, int wd, int stride) {
    const int ph = h + 2, pw = wd + 2;
    const int oh = h / stride, ow = wd / stride;
    const double* pin = pad1(in, in_c, h, wd, pad_scratch());
    const __m256i gidx = _mm256_setr_epi64x(0, 2, 4, 6);

    for (int oc = 0; oc < out_c; ++oc) {
        double* och = out + static_cast<size_t>(oc) * oh * ow;
        const double* wbase = w + static_cast<size_t>(oc) * in_c * 9;
        for (int oy = 0; oy < oh; ++oy) {
            double* orow = och + static_cast<size_t>(oy) * ow;
            int ox = 0;
            for (; ox + 4 <= ow; ox += 4) {
                __m256d acc = _mm256_set1_pd(bias ? bias[oc] : 0.0);
                const double* wk = wbase;
                for (int ic = 0; ic < in_c; ++ic) {
                    const double* pch = pin + static_cast<size_t>(ic) * ph * pw;
                    for (int ky = 0; ky < 3; ++ky) {
                        const double* prow = pch + static_cast<size_t>(oy * stride + ky) * pw + ox * stride;
                        if (stride == 1) {
                            acc = _mm256_fmadd_pd(_mm256_set1_pd(wk[0]), _mm256_loadu_pd(prow + 0), acc);
                            acc = _mm256_fmadd_pd(_mm256_set1_pd(wk[1]), _mm256_loadu_pd(prow + 1), acc);
                            acc = _mm256_fmadd_pd(_mm256_set1_pd(wk[2]), _mm256_loadu_pd(prow + 2), acc);
                        } else {
                            acc = _mm256_fmadd_pd(_mm256_set1_pd(wk[0]), _mm256_i64gather_pd(prow + 0, gidx, 8), acc);
                            acc = _mm256_fmadd_pd(_mm256_set1_pd(wk[1]), _mm256_i64gather_pd(prow + 1, gidx, 8), acc);
                            acc = _mm256_fmadd_pd(_mm256_set1_pd(wk[2]), _mm256_i64gather_pd(prow + 2, gidx, 8), acc);
                        }
                        wk += 3;
                    }
                }
                _mm256_storeu_pd(orow + ox, acc);
            }
            for (; ox < ow; ++ox) {
                double acc = bias ? bias[oc] : 0.0;
                const double* wk = wbase;
                for (int ic = 0; ic < in_c; ++ic) {
                    const double* pch = pin + static_cast<size_t>(ic) * ph * pw;
                    for (int ky = 0; ky < 3; ++ky) {
                        const double* prow = pch + static_cast<size_t>(oy * stride + ky) * pw + ox * stride;
                        acc += wk[0] * prow[0] + wk[1] * prow[1] + wk[2] * prow[2];
                        wk += 3;
                    }
                }
                orow[ox] = acc;
            }
        }
    }
}

void conv3x3_bwd_input_avx2(const double* gout, const double* w, double* gin,
                            int in_c, int out_c, int h, int wd, int stride) {
    if (stride != 1) {
        scalar_backend().conv3x3_bwd_input(gout, w, gin, in_c, out_c, h, wd, stride);
        return;
    }
    const int ph = h + 2, pw = wd + 2;
    const double* pg = pad1(gout, out_c, h, wd, pad_scratch());
    for (int ic = 0; ic < in_c; ++ic) {
        double* ich = gin + static_cast<size_t>(ic) * h * wd;
        for (int y = 0; y < h; ++y) {
            double* grow = ich + static_cast<size_t>(y) * wd;
            int x = 0;
            for (; x + 4 <= wd; x += 4) {
                __m256d acc = _mm256_loadu_pd(grow + x);
                for (int oc = 0; oc < out_c; ++oc) {
                    const double* wk = w + (static_cast<size_t>(oc) * in_c + ic) * 9;
                    const double* pch = pg + static_cast<size_t>(oc) * ph * pw;
                    for (int ky = 0; ky < 3; ++ky) {
                        const double* prow = pch + static_cast<size_t>(y + ky) * pw + x;
                        acc = _mm256_fmadd_pd(_mm256_set1_pd(wk[8 - 3 * ky - 0]), _mm256_loadu_pd(prow + 0), acc);
                        acc = _mm256_fmadd_pd(_mm256_set1_pd(wk[8 - 3 * ky - 1]), _mm256_loadu_pd(prow + 1), acc);
                        acc = _mm256_fmadd_pd(_mm256_set1_pd(wk[8 - 3 * ky - 2]), _mm256_loadu_pd(prow + 2), acc);
                    }
                }
                _mm256_storeu_pd(grow + x, acc);
            }
            for (; x < wd; ++x) {
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
                grow[x] += acc;
            }
        }
    }
}

void conv3x3_bwd_params_avx2(const double* gout, const double* in, double* gw,
                             double* gb, int in_c, int out_c, int h, int wd,
                             int stride) {
    if (stride != 1) {
        scalar_backend().conv3x3_bwd_params(gout, in, gw, gb, in_c, out_c, h, wd, stride);
        return;
    }
    const int ph = h + 2, pw = wd + 2;
    const double* pin = pad1(in, in_c, h, wd, pad_scratch());
    for (int oc = 0; oc < out_c; ++oc) {
        const double* gch = gout + static_cast<size_t>(oc) * h * wd;
        if (gb) {
            __m256d vacc = _mm256_setzero_pd();
            double tail = 0.0;
            const size_t n = static_cast<size_t>(h) * wd;
            size_t i = 0;
            for (; i + 4 <= n; i += 4) vacc = _mm256_add_pd(vacc, _mm256_loadu_pd(gch + i));
            for (; i < n; ++i) tail += gch[i];
            gb[oc] += hsum(vacc) + tail;
        }
        for (int ic = 0; ic < in_c; ++ic) {
            const double* pch = pin + static_cast<size_t>(ic) * ph * pw;
            double* wk = gw + (static_cast<size_t>(oc) * in_c + ic) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    __m256d vacc = _mm256_setzero_pd();
                    double tail = 0.0;
                    for (int oy = 0; oy < h; ++oy) {
                        const double* grow = gch + static_cast<size_t>(oy) * wd;
                        const double* prow = pch + static_cast<size_t>(oy + ky) * pw + kx;
                        int ox = 0;
                        for (; ox + 4 <= wd; ox += 4)
                            vacc = _mm256_fmadd_pd(_mm256_loadu_pd(grow + ox), _mm256_loadu_pd(prow + ox), vacc);
                        for (; ox < wd; ++ox) tail += grow[ox] * prow[ox];
                    }
                    wk[3 * ky + kx] += hsum(vacc) + tail;
                }
            }
        }
    }
}

void add_avx2(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}
void sub_avx2(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}
void mul_avx2(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}
void axpy_avx2(double a, const double* x, double* y, size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}
void scale_avx2(double a, double* x, size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) x[i] *= a;
}

double sum_avx2(const double* x, size_t n) {
    __m256d vacc = _mm256_setzero_pd();
    double tail = 0.0;
    size_t i = 0;
    for (; i + 4 <= n; i += 4) vacc = _mm256_add_pd(vacc, _mm256_loadu_pd(x + i));
    for (; i < n; ++i) tail += x[i];
    return hsum(vacc) + tail;
}
double dot_avx2(const double* a, const double* b, size_t n) {
    __m256d vacc = _mm256_setzero_pd();
    double tail = 0.0;
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        vacc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), vacc);
    for (; i < n; ++i) tail += a[i] * b[i];
    return hsum(vacc) + tail;
}
double sum_abs_avx2(const double* x, size_t n) {
    const __m256d signmask = _mm256_set1_pd(-0.0);
    __m256d vacc = _mm256_setzero_pd();
    double tail = 0.0;
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        vacc = _mm256_add_pd(vacc, _mm256_andnot_pd(signmask, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) tail += std::fabs(x[i]);
    return hsum(vacc) + tail;
}
double sum_sq_avx2(const double* x, size_t n) {
    __m256d vacc = _mm256_setzero_pd();
    double tail = 0.0;
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_loadu_pd(x + i);
        vacc = _mm256_fmadd_pd(v, v, vacc);
    }
    for (; i < n; ++i) tail += x[i] * x[i];
    return hsum(vacc) + tail;
}
double sum_abs_diff_avx2(const double* a, const double* b, size_t n) {
    const __m256d signmask = _mm256_set1_pd(-0.0);
    __m256d vacc = _mm256_setzero_pd();
    double tail = 0.0;
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        vacc = _mm256_add_pd(vacc, _mm256_andnot_pd(signmask, d));
    }
    for (; i < n; ++i) tail += std::fabs(a[i] - b[i]);
    return hsum(vacc) + tail;
}
double sum_sq_diff_avx2(const double* a, const double* b, size_t n) {
    __m256d vacc = _mm256_setzero_pd();
    double tail = 0.0;
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        vacc = _mm256_fmadd_pd(d, d, vacc);
    }
    for (; i < n; ++i) {
        const double d = a[i] - b[i];
        tail += d * d;
    }
    return hsum(vacc) + tail;
}

} // namespace

const Backend* avx2_backend() {
    if (!__builtin_cpu_supports("avx2") || !__builtin_cpu_supports("fma"))
        return nullptr;
    static const Backend table = {
        "avx2",
        conv3x3_fwd_avx2,
        conv3x3_bwd_input_avx2,
        conv3x3_bwd_params_avx2,
        add_avx2,
        sub_avx2,
        mul_avx2,
        axpy_avx2,
        scale_avx2,
        sum_avx2,
        dot_avx2,
        sum_abs_avx2,
        sum_sq_avx2,
        sum_abs_diff_avx2,
        sum_sq_diff_avx2,
        scalar_backend().silu_fwd,
        scalar_backend().silu_bwd,
        scalar_backend().sigmoid_fwd,
        scalar_backend().sigmoid_bwd,
    };
    return &table;
}

} // namespace derain::kernels

#else // !DERAIN_WITH_AVX2

namespace derain::kernels {
const Backend* avx2_backend() { return nullptr; }
} // namespace derain::kernels

#endif

#pragma once

#include <cstddef>
#include <string_view>

namespace derain::kernels {

// Arithmetic inner loops used by the networks and losses. A Backend is a
// table of function pointers; the scalar table is the reference
// implementation and the AVX2 table overrides the hot entries. Selection
// happens once at startup (cpuid), overridable via set_backend() or the
// DERAINLAB_KERNELS environment variable ("scalar", "avx2", "auto").
//
// Convolutions are 3x3 with zero padding 1. stride is 1 or 2; for stride 2
// the input height/width must be even and the output is h/2 x w/2.
// Weight layout: w[oc][ic][ky][kx] flattened. Backward kernels accumulate
// (+=) into their gradient outputs; forward kernels overwrite.
struct Backend {
    const char* name;

    void (*conv3x3_fwd)(const double* in, const double* w, const double* bias,
                        double* out, int in_c, int out_c, int h, int wd, int stride);
    void (*conv3x3_bwd_input)(const double* gout, const double* w, double* gin,
                              int in_c, int out_c, int h, int wd, int stride);
    void (*conv3x3_bwd_params)(const double* gout, const double* in, double* gw,
                               double* gb, int in_c, int out_c, int h, int wd,
                               int stride);

    void (*add)(const double* a, const double* b, double* out, size_t n);
    void (*sub)(const double* a, const double* b, double* out, size_t n);
    void (*mul)(const double* a, const double* b, double* out, size_t n);
    void (*axpy)(double a, const double* x, double* y, size_t n); // y += a*x
    void (*scale)(double a, double* x, size_t n);

    double (*sum)(const double* x, size_t n);
    double (*dot)(const double* a, const double* b, size_t n);
    double (*sum_abs)(const double* x, size_t n);
    double (*sum_sq)(const double* x, size_t n);
    double (*sum_abs_diff)(const double* a, const double* b, size_t n);
    double (*sum_sq_diff)(const double* a, const double* b, size_t n);

    void (*silu_fwd)(const double* x, double* y, size_t n);
    // gx += gy * silu'(x)
    void (*silu_bwd)(const double* x, const double* gy, double* gx, size_t n);
    void (*sigmoid_fwd)(const double* x, double* y, size_t n);
    // gx += gy * y*(1-y), where y is the forward output
    void (*sigmoid_bwd)(const double* y, const double* gy, double* gx, size_t n);
};

const Backend& scalar_backend();
const Backend* avx2_backend(); // nullptr when unsupported by CPU or build

// The currently selected table; defaults to the best runtime-supported one.
const Backend& active();
std::string_view active_name();

// name: "auto", "scalar" or "avx2". Throws ValidationError on an unknown or
// unsupported name.
void set_backend(std::string_view name);

} // namespace derain::kernels

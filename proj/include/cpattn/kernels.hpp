#pragma once

#include <cstddef>

namespace cpattn::kernels {

// Geometry for a 2D cross-correlation over [ch][h][w] input with
// [co][ci][fh][fw] kernels and zero padding.
struct Conv2dGeom {
    int ci, h, w;
    int co, fh, fw;
    int sh = 1, sw = 1;
    int ph = 0, pw = 0;

    int out_h() const { return (h + 2 * ph - fh) / sh + 1; }
    int out_w() const { return (w + 2 * pw - fw) / sw + 1; }
};

// Serial reference kernels: straightforward nested loops, kept as the
// comparison baseline for the OpenMP variants.
void conv2d_forward_serial(const Conv2dGeom& g, const double* in, const double* ker,
                           const double* bias, double* out);
void conv2d_input_grad_serial(const Conv2dGeom& g, const double* gout, const double* ker,
                              double* gin);
void conv2d_param_grad_serial(const Conv2dGeom& g, const double* gout, const double* in,
                              double* gker, double* gbias);

// OpenMP variants. Each output element is owned by exactly one thread and
// accumulated in the same order as the serial reference, so results are
// bitwise identical to the serial kernels and do not depend on thread count.
void conv2d_forward_omp(const Conv2dGeom& g, const double* in, const double* ker,
                        const double* bias, double* out);
void conv2d_input_grad_omp(const Conv2dGeom& g, const double* gout, const double* ker,
                           double* gin);
void conv2d_param_grad_omp(const Conv2dGeom& g, const double* gout, const double* in,
                           double* gker, double* gbias);

// Global switch consulted by the dispatching wrappers below. Defaults to
// parallel; tests and the benchmark flip it.
bool parallel_enabled();
void set_parallel(bool on);

void conv2d_forward(const Conv2dGeom& g, const double* in, const double* ker,
                    const double* bias, double* out);
void conv2d_input_grad(const Conv2dGeom& g, const double* gout, const double* ker,
                       double* gin);
void conv2d_param_grad(const Conv2dGeom& g, const double* gout, const double* in,
                       double* gker, double* gbias);

// out[m][n] = sum_k a[m][k] * b[k][n]
void matmul_serial(const double* a, const double* b, double* out, int m, int k, int n);

}  // namespace cpattn::kernels

#include "cpattn/kernels.hpp"

#include <atomic>

namespace cpattn::kernels {

namespace {
std::atomic<bool> g_parallel{true};

inline std::size_t idx3(int a, int b, int c, int eb, int ec) {
    return (static_cast<std::size_t>(a) * eb + b) * ec + c;
}
inline std::size_t idx4(int a, int b, int c, int d, int eb, int ec, int ed) {
    return ((static_cast<std::size_t>(a) * eb + b) * ec + c) * ed + d;
}
}  // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

void conv2d_forward_serial(const Conv2dGeom& g, const double* in, const double* ker,
                           const double* bias, double* out) {
    const int ho = g.out_h(), wo = g.out_w();
    for (int co = 0; co < g.co; ++co) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                double acc = bias ? bias[co] : 0.0;
                for (int ci = 0; ci < g.ci; ++ci) {
                    for (int dy = 0; dy < g.fh; ++dy) {
                        const int iy = oy * g.sh + dy - g.ph;
                        if (iy < 0 || iy >= g.h) continue;
                        for (int dx = 0; dx < g.fw; ++dx) {
                            const int ix = ox * g.sw + dx - g.pw;
                            if (ix < 0 || ix >= g.w) continue;
                            acc += in[idx3(ci, iy, ix, g.h, g.w)] *
                                   ker[idx4(co, ci, dy, dx, g.ci, g.fh, g.fw)];
                        }
                    }
                }
                out[idx3(co, oy, ox, ho, wo)] = acc;
            }
        }
    }
}

void conv2d_input_grad_serial(const Conv2dGeom& g, const double* gout, const double* ker,
                              double* gin) {
    const int ho = g.out_h(), wo = g.out_w();
    for (int ci = 0; ci < g.ci; ++ci) {
        for (int iy = 0; iy < g.h; ++iy) {
            for (int ix = 0; ix < g.w; ++ix) {
                double acc = 0.0;
                for (int co = 0; co < g.co; ++co) {
                    for (int dy = 0; dy < g.fh; ++dy) {
                        const int ny = iy + g.ph - dy;
                        if (ny < 0 || ny % g.sh != 0) continue;
                        const int oy = ny / g.sh;
                        if (oy >= ho) continue;
                        for (int dx = 0; dx < g.fw; ++dx) {
                            const int nx = ix + g.pw - dx;
                            if (nx < 0 || nx % g.sw != 0) continue;
                            const int ox = nx / g.sw;
                            if (ox >= wo) continue;
                            acc += gout[idx3(co, oy, ox, ho, wo)] *
                                   ker[idx4(co, ci, dy, dx, g.ci, g.fh, g.fw)];
                        }
                    }
                }
                gin[idx3(ci, iy, ix, g.h, g.w)] = acc;
            }
        }
    }
}

void conv2d_param_grad_serial(const Conv2dGeom& g, const double* gout, const double* in,
                              double* gker, double* gbias) {
    const int ho = g.out_h(), wo = g.out_w();
    for (int co = 0; co < g.co; ++co) {
        for (int ci = 0; ci < g.ci; ++ci) {
            for (int dy = 0; dy < g.fh; ++dy) {
                for (int dx = 0; dx < g.fw; ++dx) {
                    double acc = 0.0;
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * g.sh + dy - g.ph;
                        if (iy < 0 || iy >= g.h) continue;
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * g.sw + dx - g.pw;
                            if (ix < 0 || ix >= g.w) continue;
                            acc += gout[idx3(co, oy, ox, ho, wo)] * in[idx3(ci, iy, ix, g.h, g.w)];
                        }
                    }
                    gker[idx4(co, ci, dy, dx, g.ci, g.fh, g.fw)] = acc;
                }
            }
        }
        if (gbias) {
            double acc = 0.0;
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) acc += gout[idx3(co, oy, ox, ho, wo)];
            gbias[co] = acc;
        }
    }
}

// The OpenMP kernels restructure the loops so the innermost runs over the
// contiguous ox/ix axis (vectorizable), while keeping the per-element
// accumulation order of the serial reference: (ci, dy, dx) for the forward
// pass, (co, dy, dx) for the input gradient, (oy, ox) for parameter
// gradients. Starting value (bias or zero) is applied before accumulation
// in both variants, which is what makes the serial/omp pair bit-equal.

void conv2d_forward_omp(const Conv2dGeom& g, const double* in, const double* ker,
                        const double* bias, double* out) {
    const int ho = g.out_h(), wo = g.out_w();
#pragma omp parallel for schedule(static)
    for (int co = 0; co < g.co; ++co) {
        for (int oy = 0; oy < ho; ++oy) {
            double* orow = out + idx3(co, oy, 0, ho, wo);
            const double b = bias ? bias[co] : 0.0;
            for (int ox = 0; ox < wo; ++ox) orow[ox] = b;
            for (int ci = 0; ci < g.ci; ++ci) {
                for (int dy = 0; dy < g.fh; ++dy) {
                    const int iy = oy * g.sh + dy - g.ph;
                    if (iy < 0 || iy >= g.h) continue;
                    const double* irow = in + idx3(ci, iy, 0, g.h, g.w);
                    for (int dx = 0; dx < g.fw; ++dx) {
                        const double kv = ker[idx4(co, ci, dy, dx, g.ci, g.fh, g.fw)];
                        // valid ox range: 0 <= ox*sw + dx - pw < w
                        int lo = 0;
                        while (lo < wo && lo * g.sw + dx - g.pw < 0) ++lo;
                        int hi = wo;
                        while (hi > lo && (hi - 1) * g.sw + dx - g.pw >= g.w) --hi;
                        const int off = dx - g.pw;
                        if (g.sw == 1) {
                            for (int ox = lo; ox < hi; ++ox) orow[ox] += irow[ox + off] * kv;
                        } else {
                            for (int ox = lo; ox < hi; ++ox)
                                orow[ox] += irow[ox * g.sw + off] * kv;
                        }
                    }
                }
            }
        }
    }
}

void conv2d_input_grad_omp(const Conv2dGeom& g, const double* gout, const double* ker,
                           double* gin) {
    const int ho = g.out_h(), wo = g.out_w();
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < g.ci; ++ci) {
        for (int iy = 0; iy < g.h; ++iy) {
            double* grow = gin + idx3(ci, iy, 0, g.h, g.w);
            for (int ix = 0; ix < g.w; ++ix) grow[ix] = 0.0;
            for (int co = 0; co < g.co; ++co) {
                for (int dy = 0; dy < g.fh; ++dy) {
                    const int ny = iy + g.ph - dy;
                    if (ny < 0 || ny % g.sh != 0) continue;
                    const int oy = ny / g.sh;
                    if (oy >= ho) continue;
                    const double* gorow = gout + idx3(co, oy, 0, ho, wo);
                    for (int dx = 0; dx < g.fw; ++dx) {
                        const double kv = ker[idx4(co, ci, dy, dx, g.ci, g.fh, g.fw)];
                        // ix = ox*sw + dx - pw for ox in [lo, hi)
                        int lo = 0;
                        while (lo < wo && lo * g.sw + dx - g.pw < 0) ++lo;
                        int hi = wo;
                        while (hi > lo && (hi - 1) * g.sw + dx - g.pw >= g.w) --hi;
                        const int off = dx - g.pw;
                        if (g.sw == 1) {
                            for (int ox = lo; ox < hi; ++ox) grow[ox + off] += gorow[ox] * kv;
                        } else {
                            for (int ox = lo; ox < hi; ++ox)
                                grow[ox * g.sw + off] += gorow[ox] * kv;
                        }
                    }
                }
            }
        }
    }
}

void conv2d_param_grad_omp(const Conv2dGeom& g, const double* gout, const double* in,
                           double* gker, double* gbias) {
    const int ho = g.out_h(), wo = g.out_w();
#pragma omp parallel for schedule(static)
    for (int co = 0; co < g.co; ++co) {
        for (int ci = 0; ci < g.ci; ++ci) {
            for (int dy = 0; dy < g.fh; ++dy) {
                for (int dx = 0; dx < g.fw; ++dx) {
                    double acc = 0.0;
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * g.sh + dy - g.ph;
                        if (iy < 0 || iy >= g.h) continue;
                        const double* gorow = gout + idx3(co, oy, 0, ho, wo);
                        const double* irow = in + idx3(ci, iy, 0, g.h, g.w);
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * g.sw + dx - g.pw;
                            if (ix < 0 || ix >= g.w) continue;
                            acc += gorow[ox] * irow[ix];
                        }
                    }
                    gker[idx4(co, ci, dy, dx, g.ci, g.fh, g.fw)] = acc;
                }
            }
        }
        if (gbias) {
            double acc = 0.0;
            for (int oy = 0; oy < ho; ++oy) {
                const double* gorow = gout + idx3(co, oy, 0, ho, wo);
                for (int ox = 0; ox < wo; ++ox) acc += gorow[ox];
            }
            gbias[co] = acc;
        }
    }
}

void conv2d_forward(const Conv2dGeom& g, const double* in, const double* ker,
                    const double* bias, double* out) {
    if (parallel_enabled())
        conv2d_forward_omp(g, in, ker, bias, out);
    else
        conv2d_forward_serial(g, in, ker, bias, out);
}

void conv2d_input_grad(const Conv2dGeom& g, const double* gout, const double* ker,
                       double* gin) {
    if (parallel_enabled())
        conv2d_input_grad_omp(g, gout, ker, gin);
    else
        conv2d_input_grad_serial(g, gout, ker, gin);
}

void conv2d_param_grad(const Conv2dGeom& g, const double* gout, const double* in,
                       double* gker, double* gbias) {
    if (parallel_enabled())
        conv2d_param_grad_omp(g, gout, in, gker, gbias);
    else
        conv2d_param_grad_serial(g, gout, in, gker, gbias);
}

void matmul_serial(const double* a, const double* b, double* out, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p)
                acc += a[static_cast<std::size_t>(i) * k + p] *
                       b[static_cast<std::size_t>(p) * n + j];
            out[static_cast<std::size_t>(i) * n + j] = acc;
        }
    }
}

}  // namespace cpattn::kernels

#pragma once

// Independent reference implementations used only by tests. Everything here
// is derived directly from definitions (finite differences, brute-force
// summation) rather than from the library's own kernels.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cpattn/autodiff.hpp"
#include "cpattn/dataset.hpp"
#include "cpattn/rng.hpp"
#include "cpattn/tensor.hpp"

namespace oracle {

// Central finite difference of f at coordinate i of x.
inline double fd_partial(const std::function<double()>& f, double* xi) {
    const double x0 = *xi;
    const double h = 1e-5 * std::max(1.0, std::abs(x0));
    *xi = x0 + h;
    const double fp = f();
    *xi = x0 - h;
    const double fm = f();
    *xi = x0;
    return (fp - fm) / (2.0 * h);
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Central difference with an explicit step scale.
inline double fd_partial_h(const std::function<double()>& f, double* xi, double h0) {
    const double x0 = *xi;
    const double h = h0 * std::max(1.0, std::abs(x0));
    *xi = x0 + h;
    const double fp = f();
    *xi = x0 - h;
    const double fm = f();
    *xi = x0;
    return (fp - fm) / (2.0 * h);
}

// ReLU-aware check: a difference window straddling a kink yields a bogus
// numeric estimate, so retry with smaller steps. Kink artifacts vanish as h
// shrinks below the kink distance; genuine gradient bugs do not.
inline bool fd_gradient_ok(const std::function<double()>& f, double* xi, double analytic,
                           double tol) {
    for (double h : {1e-5, 1e-6, 1e-7, 1e-8}) {
        if (rel_err(analytic, fd_partial_h(f, xi, h)) < tol) return true;
    }
    return false;
}

// Cross-correlation computed from the definition: for every output element,
// walk the full kernel window and skip out-of-range (zero-padded) taps.
inline void conv2d_naive(int ci, int h, int w, int co, int fh, int fw, int sh, int sw, int ph,
                         int pw, const std::vector<double>& in, const std::vector<double>& ker,
                         const std::vector<double>& bias, std::vector<double>& out) {
    const int oh = (h + 2 * ph - fh) / sh + 1;
    const int ow = (w + 2 * pw - fw) / sw + 1;
    out.assign(static_cast<std::size_t>(co) * oh * ow, 0.0);
    for (int o = 0; o < co; ++o) {
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
                for (int c = 0; c < ci; ++c) {
                    for (int dy = 0; dy < fh; ++dy) {
                        for (int dx = 0; dx < fw; ++dx) {
                            const int iy = y * sh - ph + dy;
                            const int ix = x * sw - pw + dx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += in[(static_cast<std::size_t>(c) * h + iy) * w + ix] *
                                   ker[((static_cast<std::size_t>(o) * ci + c) * fh + dy) * fw +
                                       dx];
                        }
                    }
                }
                out[(static_cast<std::size_t>(o) * oh + y) * ow + x] = acc;
            }
        }
    }
}

// Mean squared frame-to-frame displacement of one joint; the statistic that
// separates the synthetic classes by construction.
inline double joint_motion_energy(const cpattn::MotionSample& s, int joint) {
    double acc = 0.0;
    const int T = s.frames();
    for (int t = 0; t + 1 < T; ++t) {
        for (int c = 0; c < s.coords(); ++c) {
            const double d = s.positions.at(t + 1, c, joint) - s.positions.at(t, c, joint);
            acc += d * d;
        }
    }
    return acc / static_cast<double>(T - 1);
}

// Classifies by thresholding joint_motion_energy; returns the labels it
// would assign with the best single threshold (midpoint of the class gap).
inline bool variance_threshold_separates(const cpattn::Dataset& ds, int joint) {
    double max_normal = -1e300, min_abnormal = 1e300;
    for (const auto& s : ds.samples) {
        const double e = joint_motion_energy(s, joint);
        if (s.label == cpattn::kLabelNormal) max_normal = std::max(max_normal, e);
        else min_abnormal = std::min(min_abnormal, e);
    }
    return max_normal < min_abnormal;
}

inline void fill_uniform(cpattn::Rng& rng, cpattn::Tensor& t, double lo, double hi) {
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
}

}  // namespace oracle

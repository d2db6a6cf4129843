#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "cpattn/kernels.hpp"
#include "cpattn/rng.hpp"
#include "oracles.hpp"

using namespace cpattn;
using namespace cpattn::kernels;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::vector<Conv2dGeom> geometries() {
    return {
        {.ci = 1, .h = 1, .w = 4, .co = 1, .fh = 1, .fw = 3, .ph = 0, .pw = 1},
        {.ci = 2, .h = 3, .w = 7, .co = 3, .fh = 1, .fw = 3, .ph = 0, .pw = 1},
        {.ci = 3, .h = 5, .w = 5, .co = 2, .fh = 3, .fw = 3, .ph = 1, .pw = 1},
        {.ci = 4, .h = 6, .w = 9, .co = 5, .fh = 2, .fw = 4, .sh = 2, .sw = 3, .ph = 1, .pw = 2},
        {.ci = 8, .h = 16, .w = 8, .co = 8, .fh = 3, .fw = 3, .ph = 1, .pw = 1},
        {.ci = 2, .h = 4, .w = 4, .co = 2, .fh = 4, .fw = 4, .ph = 0, .pw = 0},  // out 1x1
    };
}

}  // namespace

TEST_CASE("forward kernel matches the naive definition oracle") {
    Rng rng(101);
    for (const auto& g : geometries()) {
        const auto in = random_vec(rng, static_cast<std::size_t>(g.ci) * g.h * g.w);
        const auto ker = random_vec(rng, static_cast<std::size_t>(g.co) * g.ci * g.fh * g.fw);
        const auto bias = random_vec(rng, static_cast<std::size_t>(g.co));
        std::vector<double> out(static_cast<std::size_t>(g.co) * g.out_h() * g.out_w());
        conv2d_forward_serial(g, in.data(), ker.data(), bias.data(), out.data());

        std::vector<double> expect;
        oracle::conv2d_naive(g.ci, g.h, g.w, g.co, g.fh, g.fw, g.sh, g.sw, g.ph, g.pw, in, ker,
                             bias, expect);
        REQUIRE(out.size() == expect.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            CHECK(out[i] == doctest::Approx(expect[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("serial and OpenMP kernels are bitwise identical") {
    Rng rng(102);
    for (const auto& g : geometries()) {
        const std::size_t in_n = static_cast<std::size_t>(g.ci) * g.h * g.w;
        const std::size_t ker_n = static_cast<std::size_t>(g.co) * g.ci * g.fh * g.fw;
        const std::size_t out_n = static_cast<std::size_t>(g.co) * g.out_h() * g.out_w();
        const auto in = random_vec(rng, in_n);
        const auto ker = random_vec(rng, ker_n);
        const auto bias = random_vec(rng, static_cast<std::size_t>(g.co));
        const auto gout = random_vec(rng, out_n);

        std::vector<double> out_s(out_n), out_p(out_n);
        conv2d_forward_serial(g, in.data(), ker.data(), bias.data(), out_s.data());
        conv2d_forward_omp(g, in.data(), ker.data(), bias.data(), out_p.data());
        CHECK(bitwise_equal(out_s, out_p));

        std::vector<double> gin_s(in_n), gin_p(in_n);
        conv2d_input_grad_serial(g, gout.data(), ker.data(), gin_s.data());
        conv2d_input_grad_omp(g, gout.data(), ker.data(), gin_p.data());
        CHECK(bitwise_equal(gin_s, gin_p));

        std::vector<double> gker_s(ker_n), gker_p(ker_n), gb_s(bias.size()), gb_p(bias.size());
        conv2d_param_grad_serial(g, gout.data(), in.data(), gker_s.data(), gb_s.data());
        conv2d_param_grad_omp(g, gout.data(), in.data(), gker_p.data(), gb_p.data());
        CHECK(bitwise_equal(gker_s, gker_p));
        CHECK(bitwise_equal(gb_s, gb_p));
    }
}

TEST_CASE("gradient kernels are the adjoints of the forward pass") {
    // d/dx <gout, forward(x)> must equal the gradient kernels' output; checked
    // against central finite differences of the forward kernel itself.
    Rng rng(103);
    const Conv2dGeom g{.ci = 2, .h = 3, .w = 6, .co = 3, .fh = 1, .fw = 3, .ph = 0, .pw = 1};
    const std::size_t in_n = static_cast<std::size_t>(g.ci) * g.h * g.w;
    const std::size_t ker_n = static_cast<std::size_t>(g.co) * g.ci * g.fh * g.fw;
    const std::size_t out_n = static_cast<std::size_t>(g.co) * g.out_h() * g.out_w();
    auto in = random_vec(rng, in_n);
    auto ker = random_vec(rng, ker_n);
    auto bias = random_vec(rng, static_cast<std::size_t>(g.co));
    const auto gout = random_vec(rng, out_n);

    auto weighted_forward = [&]() {
        std::vector<double> out(out_n);
        conv2d_forward_serial(g, in.data(), ker.data(), bias.data(), out.data());
        double acc = 0.0;
        for (std::size_t i = 0; i < out_n; ++i) acc += gout[i] * out[i];
        return acc;
    };

    std::vector<double> gin(in_n);
    conv2d_input_grad_serial(g, gout.data(), ker.data(), gin.data());
    for (std::size_t i = 0; i < in_n; ++i) {
        CHECK(oracle::rel_err(gin[i], oracle::fd_partial(weighted_forward, &in[i])) < 1e-7);
    }

    std::vector<double> gker(ker_n), gbias(bias.size());
    conv2d_param_grad_serial(g, gout.data(), in.data(), gker.data(), gbias.data());
    for (std::size_t i = 0; i < ker_n; ++i) {
        CHECK(oracle::rel_err(gker[i], oracle::fd_partial(weighted_forward, &ker[i])) < 1e-7);
    }
    for (std::size_t i = 0; i < bias.size(); ++i) {
        CHECK(oracle::rel_err(gbias[i], oracle::fd_partial(weighted_forward, &bias[i])) < 1e-7);
    }
}

TEST_CASE("dispatch honors the parallel switch") {
    Rng rng(104);
    const Conv2dGeom g{.ci = 2, .h = 2, .w = 5, .co = 2, .fh = 1, .fw = 3, .ph = 0, .pw = 1};
    const auto in = random_vec(rng, static_cast<std::size_t>(g.ci) * g.h * g.w);
    const auto ker = random_vec(rng, static_cast<std::size_t>(g.co) * g.ci * g.fh * g.fw);
    const auto bias = random_vec(rng, static_cast<std::size_t>(g.co));
    std::vector<double> out_on(static_cast<std::size_t>(g.co) * g.out_h() * g.out_w());
    std::vector<double> out_off(out_on.size());

    CHECK(parallel_enabled());
    conv2d_forward(g, in.data(), ker.data(), bias.data(), out_on.data());
    set_parallel(false);
    CHECK_FALSE(parallel_enabled());
    conv2d_forward(g, in.data(), ker.data(), bias.data(), out_off.data());
    set_parallel(true);
    CHECK(bitwise_equal(out_on, out_off));
}

TEST_CASE("matmul_serial matches a triple-loop recomputation") {
    Rng rng(105);
    const int m = 4, k = 6, n = 3;
    const auto a = random_vec(rng, static_cast<std::size_t>(m) * k);
    const auto b = random_vec(rng, static_cast<std::size_t>(k) * n);
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    matmul_serial(a.data(), b.data(), out.data(), m, k, n);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int kk = 0; kk < k; ++kk)
                acc += a[static_cast<std::size_t>(i) * k + kk] * b[static_cast<std::size_t>(kk) * n + j];
            CHECK(out[static_cast<std::size_t>(i) * n + j] == doctest::Approx(acc).epsilon(1e-12));
        }
    }
}

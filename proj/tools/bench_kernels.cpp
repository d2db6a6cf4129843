#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cpattn/kernels.hpp"
#include "cpattn/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using cpattn::Rng;
using namespace cpattn::kernels;

struct Workload {
    std::string name;
    Conv2dGeom g;
};

double flops_forward(const Conv2dGeom& g) {
    return 2.0 * g.co * g.out_h() * g.out_w() * g.ci * g.fh * g.fw;
}

template <typename F>
double time_best_ms(int repeat, F&& f) {
    double best = 1e300;
    for (int r = 0; r < repeat; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

void fill_random(Rng& rng, std::vector<double>& v) {
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

int run_workload(const Workload& w, int repeat) {
    const Conv2dGeom& g = w.g;
    const std::size_t in_n = static_cast<std::size_t>(g.ci) * g.h * g.w;
    const std::size_t ker_n = static_cast<std::size_t>(g.co) * g.ci * g.fh * g.fw;
    const std::size_t out_n = static_cast<std::size_t>(g.co) * g.out_h() * g.out_w();

    Rng rng(0xbe5cu);
    std::vector<double> in(in_n), ker(ker_n), bias(static_cast<std::size_t>(g.co)), gout(out_n);
    fill_random(rng, in);
    fill_random(rng, ker);
    fill_random(rng, bias);
    fill_random(rng, gout);

    std::vector<double> out_s(out_n), out_p(out_n);
    std::vector<double> gin_s(in_n), gin_p(in_n);
    std::vector<double> gker_s(ker_n), gker_p(ker_n);
    std::vector<double> gbias_s(bias.size()), gbias_p(bias.size());

    const double fwd_ms_s =
        time_best_ms(repeat, [&] { conv2d_forward_serial(g, in.data(), ker.data(), bias.data(), out_s.data()); });
    const double fwd_ms_p =
        time_best_ms(repeat, [&] { conv2d_forward_omp(g, in.data(), ker.data(), bias.data(), out_p.data()); });
    const double igrad_ms_s =
        time_best_ms(repeat, [&] { conv2d_input_grad_serial(g, gout.data(), ker.data(), gin_s.data()); });
    const double igrad_ms_p =
        time_best_ms(repeat, [&] { conv2d_input_grad_omp(g, gout.data(), ker.data(), gin_p.data()); });
    const double pgrad_ms_s = time_best_ms(
        repeat, [&] { conv2d_param_grad_serial(g, gout.data(), in.data(), gker_s.data(), gbias_s.data()); });
    const double pgrad_ms_p = time_best_ms(
        repeat, [&] { conv2d_param_grad_omp(g, gout.data(), in.data(), gker_p.data(), gbias_p.data()); });

    int mismatches = 0;
    if (!bitwise_equal(out_s, out_p)) ++mismatches;
    if (!bitwise_equal(gin_s, gin_p)) ++mismatches;
    if (!bitwise_equal(gker_s, gker_p) || !bitwise_equal(gbias_s, gbias_p)) ++mismatches;

    const double gf = flops_forward(g) * 1e-6;  // GFLOP when divided by ms
    std::printf("%-22s fwd %8.3f / %8.3f ms (%5.2fx, %6.2f GFLOP/s)  igrad %8.3f / %8.3f ms "
                "(%5.2fx)  pgrad %8.3f / %8.3f ms (%5.2fx)  %s\n",
                w.name.c_str(), fwd_ms_s, fwd_ms_p, fwd_ms_s / fwd_ms_p, gf / fwd_ms_p,
                igrad_ms_s, igrad_ms_p, igrad_ms_s / igrad_ms_p, pgrad_ms_s, pgrad_ms_p,
                pgrad_ms_s / pgrad_ms_p, mismatches == 0 ? "bitwise-identical" : "MISMATCH");
    return mismatches;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"serial vs OpenMP conv kernel benchmark"};
    int repeat = 5;
    int threads = 0;
    app.add_option("--repeat", repeat, "timing repetitions (best-of)");
    app.add_option("--threads", threads, "OpenMP thread count (0 = runtime default)");
    CLI11_PARSE(app, argc, argv);

#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
    std::printf("OpenMP max threads: %d\n", omp_get_max_threads());
#else
    std::printf("built without OpenMP; comparing identical serial paths\n");
#endif

    const std::vector<Workload> workloads = {
        {"model conv1 8x3x200", {.ci = 8, .h = 3, .w = 200, .co = 8, .fh = 1, .fw = 3, .ph = 0, .pw = 1}},
        {"model conv3 16x3x200", {.ci = 16, .h = 3, .w = 200, .co = 16, .fh = 1, .fw = 3, .ph = 0, .pw = 1}},
        {"wide 64x3x200", {.ci = 64, .h = 3, .w = 200, .co = 64, .fh = 1, .fw = 3, .ph = 0, .pw = 1}},
        {"image 32x64x64 3x3", {.ci = 32, .h = 64, .w = 64, .co = 32, .fh = 3, .fw = 3, .ph = 1, .pw = 1}},
    };

    int mismatches = 0;
    for (const auto& w : workloads) mismatches += run_workload(w, repeat);
    return mismatches == 0 ? 0 : 1;
}

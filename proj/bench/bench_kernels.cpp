// Times each hot kernel's serial reference against the OpenMP version
// on desk-scale shapes and reports the speedup plus the maximum
// absolute difference, which must be exactly zero.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "evlie/kernels.hpp"

using namespace evlie;

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
    fn(); // warm-up
    const auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

std::vector<double> rnd_vec(std::mt19937_64& rng, size_t n, double scale) {
    std::uniform_real_distribution<double> d(-scale, scale);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

double max_abs_diff(const std::vector<double>& a,
                    const std::vector<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::fabs(a[i] - b[i]));
    }
    return m;
}

void report(const char* name, double serial_ms, double par_ms, double diff) {
    std::printf("%-12s serial %9.3f ms   parallel %9.3f ms   speedup %5.2fx"
                "   max|diff| %g%s\n",
                name, serial_ms, par_ms, serial_ms / par_ms, diff,
                diff == 0.0 ? "" : "  MISMATCH");
}

} // namespace

int main() {
    std::mt19937_64 rng(2024);
    int failures = 0;

    {
        const int64_t m = 512, k = 512, n = 512;
        const auto a = rnd_vec(rng, static_cast<size_t>(m) * k, 1.0);
        const auto b = rnd_vec(rng, static_cast<size_t>(k) * n, 1.0);
        std::vector<double> cs(static_cast<size_t>(m) * n);
        std::vector<double> cp(cs.size());
        const double ts = time_ms(
            [&] { kernels::serial::matmul(a.data(), b.data(), cs.data(), m, k, n); }, 3);
        const double tp = time_ms(
            [&] { kernels::par::matmul(a.data(), b.data(), cp.data(), m, k, n); }, 3);
        const double diff = max_abs_diff(cs, cp);
        report("matmul", ts, tp, diff);
        failures += diff != 0.0;
    }

    {
        const int64_t c = 32, h = 256, w = 256, kh = 3, kw = 3;
        const auto x = rnd_vec(rng, static_cast<size_t>(c) * h * w, 1.0);
        const auto k = rnd_vec(rng, static_cast<size_t>(c) * kh * kw, 1.0);
        const auto bias = rnd_vec(rng, static_cast<size_t>(c), 1.0);
        std::vector<double> ys(x.size()), yp(x.size());
        const double ts = time_ms([&] {
            kernels::serial::conv2d_dw(x.data(), k.data(), bias.data(),
                                       ys.data(), c, h, w, kh, kw);
        }, 5);
        const double tp = time_ms([&] {
            kernels::par::conv2d_dw(x.data(), k.data(), bias.data(),
                                    yp.data(), c, h, w, kh, kw);
        }, 5);
        const double diff = max_abs_diff(ys, yp);
        report("conv2d_dw", ts, tp, diff);
        failures += diff != 0.0;
    }

    {
        const int64_t cin = 32, cout = 32, h = 256, w = 256;
        const auto x = rnd_vec(rng, static_cast<size_t>(cin) * h * w, 1.0);
        const auto wm = rnd_vec(rng, static_cast<size_t>(cout) * cin, 1.0);
        const auto bias = rnd_vec(rng, static_cast<size_t>(cout), 1.0);
        std::vector<double> ys(static_cast<size_t>(cout) * h * w);
        std::vector<double> yp(ys.size());
        const double ts = time_ms([&] {
            kernels::serial::conv2d_pw(x.data(), wm.data(), bias.data(),
                                       ys.data(), cin, cout, h, w);
        }, 5);
        const double tp = time_ms([&] {
            kernels::par::conv2d_pw(x.data(), wm.data(), bias.data(),
                                    yp.data(), cin, cout, h, w);
        }, 5);
        const double diff = max_abs_diff(ys, yp);
        report("conv2d_pw", ts, tp, diff);
        failures += diff != 0.0;
    }

    {
        const int64_t c = 16, h = 128, w = 128, taps = 5;
        const auto fe = rnd_vec(rng, static_cast<size_t>(c) * h * w, 1.0);
        const auto kv = rnd_vec(rng, static_cast<size_t>(taps) * h * w, 0.5);
        const auto kh = rnd_vec(rng, static_cast<size_t>(taps) * h * w, 0.5);
        const auto wt = rnd_vec(rng, static_cast<size_t>(taps * taps) * h * w, 0.5);
        const auto px = rnd_vec(rng, static_cast<size_t>(taps * taps) * h * w, 2.0);
        const auto py = rnd_vec(rng, static_cast<size_t>(taps * taps) * h * w, 2.0);
        std::vector<double> os(fe.size()), op(fe.size());
        const double ts = time_ms([&] {
            kernels::serial::iaef_apply(fe.data(), kv.data(), kh.data(),
                                        wt.data(), px.data(), py.data(),
                                        os.data(), c, h, w, taps);
        }, 3);
        const double tp = time_ms([&] {
            kernels::par::iaef_apply(fe.data(), kv.data(), kh.data(),
                                     wt.data(), px.data(), py.data(),
                                     op.data(), c, h, w, taps);
        }, 3);
        const double diff = max_abs_diff(os, op);
        report("iaef_apply", ts, tp, diff);
        failures += diff != 0.0;
    }

    {
        const int64_t b = 8, h = 480, w = 640;
        const size_t n_events = 4'000'000;
        std::vector<uint16_t> xs(n_events), ys(n_events);
        std::vector<int8_t> ps(n_events);
        std::vector<int32_t> bins(n_events);
        std::uniform_int_distribution<int> xd(0, static_cast<int>(w) - 1);
        std::uniform_int_distribution<int> yd(0, static_cast<int>(h) - 1);
        std::uniform_int_distribution<int> bd(0, static_cast<int>(b) - 1);
        std::uniform_int_distribution<int> pd(0, 1);
        for (size_t i = 0; i < n_events; ++i) {
            xs[i] = static_cast<uint16_t>(xd(rng));
            ys[i] = static_cast<uint16_t>(yd(rng));
            bins[i] = bd(rng);
            ps[i] = static_cast<int8_t>(pd(rng) * 2 - 1);
        }
        std::vector<int64_t> as(static_cast<size_t>(b) * h * w);
        std::vector<int64_t> ap(as.size());
        const double ts = time_ms([&] {
            std::fill(as.begin(), as.end(), 0);
            kernels::serial::voxel_accum(xs.data(), ys.data(), ps.data(),
                                         bins.data(),
                                         static_cast<int64_t>(n_events), b, h,
                                         w, as.data());
        }, 3);
        const double tp = time_ms([&] {
            std::fill(ap.begin(), ap.end(), 0);
            kernels::par::voxel_accum(xs.data(), ys.data(), ps.data(),
                                      bins.data(),
                                      static_cast<int64_t>(n_events), b, h, w,
                                      ap.data());
        }, 3);
        double diff = 0.0;
        for (size_t i = 0; i < as.size(); ++i) {
            diff = std::max(diff, std::fabs(static_cast<double>(as[i] - ap[i])));
        }
        report("voxel_accum", ts, tp, diff);
        failures += diff != 0.0;
    }

    if (failures > 0) {
        std::printf("%d kernel(s) diverged between serial and parallel\n",
                    failures);
        return 1;
    }
    return 0;
}

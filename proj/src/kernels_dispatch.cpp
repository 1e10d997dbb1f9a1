#include "evlie/kernels.hpp"

#include <atomic>

namespace evlie::kernels {

namespace {
#ifdef _OPENMP
std::atomic<bool> g_parallel{true};
#else
std::atomic<bool> g_parallel{false};
#endif
} // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }

void set_parallel(bool on) {
#ifndef _OPENMP
    on = false;
#endif
    g_parallel.store(on, std::memory_order_relaxed);
}

void matmul(const double* a, const double* b, double* c,
            int64_t m, int64_t k, int64_t n) {
    if (parallel_enabled()) par::matmul(a, b, c, m, k, n);
    else serial::matmul(a, b, c, m, k, n);
}

void conv2d_dw(const double* x, const double* k, const double* bias,
               double* y, int64_t c, int64_t h, int64_t w,
               int64_t kh, int64_t kw) {
    if (parallel_enabled()) par::conv2d_dw(x, k, bias, y, c, h, w, kh, kw);
    else serial::conv2d_dw(x, k, bias, y, c, h, w, kh, kw);
}

void conv2d_pw(const double* x, const double* wmat, const double* bias,
               double* y, int64_t cin, int64_t cout, int64_t h, int64_t w) {
    if (parallel_enabled()) par::conv2d_pw(x, wmat, bias, y, cin, cout, h, w);
    else serial::conv2d_pw(x, wmat, bias, y, cin, cout, h, w);
}

void iaef_apply(const double* fe, const double* kv, const double* kh,
                const double* w, const double* px, const double* py,
                double* out, int64_t c, int64_t h, int64_t wdt, int64_t taps) {
    if (parallel_enabled())
        par::iaef_apply(fe, kv, kh, w, px, py, out, c, h, wdt, taps);
    else
        serial::iaef_apply(fe, kv, kh, w, px, py, out, c, h, wdt, taps);
}

void voxel_accum(const uint16_t* xs, const uint16_t* ys,
                 const int8_t* ps, const int32_t* bins, int64_t n_events,
                 int64_t b, int64_t h, int64_t w, int64_t* acc) {
    if (parallel_enabled())
        par::voxel_accum(xs, ys, ps, bins, n_events, b, h, w, acc);
    else
        serial::voxel_accum(xs, ys, ps, bins, n_events, b, h, w, acc);
}

} // namespace evlie::kernels

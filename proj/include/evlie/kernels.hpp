#pragma once

#include <cstdint>

// Hot inner loops, implemented twice: a plain serial reference and an
// OpenMP version. Both produce bit-identical results for any thread
// count: every kernel is either a pure gather (one writer per output
// element, same per-element summation order) or an integer-sum reduce
// whose shards are combined in a fixed order. The serial versions are
// the reference the tests compare against; evlie_bench times the two
// side by side.

namespace evlie::kernels {

// Process-wide switch consulted by the dispatch functions below.
// Defaults to on when built with OpenMP.
bool parallel_enabled();
void set_parallel(bool on);

// RAII guard; gradient checks and toy training force serial mode.
struct SerialGuard {
    SerialGuard() : saved_(parallel_enabled()) { set_parallel(false); }
    ~SerialGuard() { set_parallel(saved_); }
    SerialGuard(const SerialGuard&) = delete;
    SerialGuard& operator=(const SerialGuard&) = delete;

private:
    bool saved_;
};

namespace serial {

// C = A(m x k) * B(k x n), row-major, C overwritten
void matmul(const double* a, const double* b, double* c,
            int64_t m, int64_t k, int64_t n);

// Depthwise 2-D correlation, zero padding, stride 1, odd kh x kw.
// x: C x H x W, k: C x kh x kw, bias: C (may be null), y: C x H x W
void conv2d_dw(const double* x, const double* k, const double* bias,
               double* y, int64_t c, int64_t h, int64_t w,
               int64_t kh, int64_t kw);

// Pointwise (1x1) convolution. x: Cin x H x W, wmat: Cout x Cin,
// bias: Cout (may be null), y: Cout x H x W
void conv2d_pw(const double* x, const double* wmat, const double* bias,
               double* y, int64_t cin, int64_t cout, int64_t h, int64_t w);

// Adaptive separable filtering with per-pixel kernels, tap weights and
// sampling offsets. Tap j of the n x n grid maps to row a = j / n and
// column b = j % n; the sample point for output pixel (y, x) is
// (x + b - n/2 + px[j], y + a - n/2 + py[j]), fetched bilinearly with
// zero padding, scaled by w[j] * kv[a] * kh[b].
// fe: C x H x W, kv/kh: n x H x W, w/px/py: n^2 x H x W, out: C x H x W
void iaef_apply(const double* fe, const double* kv, const double* kh,
                const double* w, const double* px, const double* py,
                double* out, int64_t c, int64_t h, int64_t wdt, int64_t taps);

// Signed polarity accumulation into B x H x W integer bins.
// xs/ys/bins give per-event pixel and bin indices; ps is +1/-1.
void voxel_accum(const uint16_t* xs, const uint16_t* ys,
                 const int8_t* ps, const int32_t* bins, int64_t n_events,
                 int64_t b, int64_t h, int64_t w, int64_t* acc);

} // namespace serial

namespace par {

void matmul(const double* a, const double* b, double* c,
            int64_t m, int64_t k, int64_t n);
void conv2d_dw(const double* x, const double* k, const double* bias,
               double* y, int64_t c, int64_t h, int64_t w,
               int64_t kh, int64_t kw);
void conv2d_pw(const double* x, const double* wmat, const double* bias,
               double* y, int64_t cin, int64_t cout, int64_t h, int64_t w);
void iaef_apply(const double* fe, const double* kv, const double* kh,
                const double* w, const double* px, const double* py,
                double* out, int64_t c, int64_t h, int64_t wdt, int64_t taps);
void voxel_accum(const uint16_t* xs, const uint16_t* ys,
                 const int8_t* ps, const int32_t* bins, int64_t n_events,
                 int64_t b, int64_t h, int64_t w, int64_t* acc);

} // namespace par

// Dispatchers: par:: when parallel_enabled(), serial:: otherwise.
void matmul(const double* a, const double* b, double* c,
            int64_t m, int64_t k, int64_t n);
void conv2d_dw(const double* x, const double* k, const double* bias,
               double* y, int64_t c, int64_t h, int64_t w,
               int64_t kh, int64_t kw);
void conv2d_pw(const double* x, const double* wmat, const double* bias,
               double* y, int64_t cin, int64_t cout, int64_t h, int64_t w);
void iaef_apply(const double* fe, const double* kv, const double* kh,
                const double* w, const double* px, const double* py,
                double* out, int64_t c, int64_t h, int64_t wdt, int64_t taps);
void voxel_accum(const uint16_t* xs, const uint16_t* ys,
                 const int8_t* ps, const int32_t* bins, int64_t n_events,
                 int64_t b, int64_t h, int64_t w, int64_t* acc);

// Shared scalar helper: bilinear fetch from one H x W plane with zero
// padding outside [0, w-1] x [0, h-1].
inline double bilinear_fetch(const double* plane, int64_t h, int64_t w,
                             double x, double y) {
    if (x <= -1.0 || x >= static_cast<double>(w) ||
        y <= -1.0 || y >= static_cast<double>(h)) {
        return 0.0;
    }
    // Exact floor: trunc then adjust. Computing floor as (int64)(x - 1)
    // for negative x double-rounds near integers (x = -1 + ulp gives
    // x - 1 == -2.0) and breaks the corner guards.
    auto x0 = static_cast<int64_t>(x);
    auto y0 = static_cast<int64_t>(y);
    if (static_cast<double>(x0) > x) --x0;
    if (static_cast<double>(y0) > y) --y0;
    const int64_t x1 = x0 + 1;
    const int64_t y1 = y0 + 1;
    const double fx = x - static_cast<double>(x0);
    const double fy = y - static_cast<double>(y0);
    double v00 = 0.0, v01 = 0.0, v10 = 0.0, v11 = 0.0;
    if (y0 >= 0 && x0 >= 0) v00 = plane[y0 * w + x0];
    if (y0 >= 0 && x1 < w) v01 = plane[y0 * w + x1];
    if (y1 < h && x0 >= 0) v10 = plane[y1 * w + x0];
    if (y1 < h && x1 < w) v11 = plane[y1 * w + x1];
    return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
           fy * ((1.0 - fx) * v10 + fx * v11);
}

} // namespace evlie::kernels

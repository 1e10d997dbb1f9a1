#include "evlie/kernels.hpp"

#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

// Each output element is written by exactly one thread and its inner
// summation runs in the same order as the serial kernel, so results are
// bit-identical to serial:: for any thread count. voxel_accum reduces
// per-thread integer shards in thread-index order; integer sums commute
// exactly, so it is schedule-independent as well.

namespace evlie::kernels::par {

void matmul(const double* a, const double* b, double* c,
            int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        std::memset(crow, 0, sizeof(double) * static_cast<size_t>(n));
        const double* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

void conv2d_dw(const double* x, const double* k, const double* bias,
               double* y, int64_t c, int64_t h, int64_t w,
               int64_t kh, int64_t kw) {
    const int64_t ph = kh / 2;
    const int64_t pw = kw / 2;
#pragma omp parallel for schedule(static) collapse(2)
    for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t i = 0; i < h; ++i) {
            const double* xp = x + ch * h * w;
            const double* kp = k + ch * kh * kw;
            double* yp = y + ch * h * w;
            const double b = bias ? bias[ch] : 0.0;
            for (int64_t j = 0; j < w; ++j) {
                double acc = b;
                for (int64_t u = 0; u < kh; ++u) {
                    const int64_t ii = i + u - ph;
                    if (ii < 0 || ii >= h) continue;
                    for (int64_t v = 0; v < kw; ++v) {
                        const int64_t jj = j + v - pw;
                        if (jj < 0 || jj >= w) continue;
                        acc += xp[ii * w + jj] * kp[u * kw + v];
                    }
                }
                yp[i * w + j] = acc;
            }
        }
    }
}

void conv2d_pw(const double* x, const double* wmat, const double* bias,
               double* y, int64_t cin, int64_t cout, int64_t h, int64_t w) {
    const int64_t hw = h * w;
#pragma omp parallel for schedule(static)
    for (int64_t o = 0; o < cout; ++o) {
        double* yp = y + o * hw;
        const double b = bias ? bias[o] : 0.0;
        for (int64_t p = 0; p < hw; ++p) yp[p] = b;
        const double* wrow = wmat + o * cin;
        for (int64_t ci = 0; ci < cin; ++ci) {
            const double wv = wrow[ci];
            const double* xp = x + ci * hw;
            for (int64_t p = 0; p < hw; ++p) yp[p] += wv * xp[p];
        }
    }
}

void iaef_apply(const double* fe, const double* kv, const double* kh,
                const double* w, const double* px, const double* py,
                double* out, int64_t c, int64_t h, int64_t wdt, int64_t taps) {
    const int64_t hw = h * wdt;
    const int64_t half = taps / 2;
    const int64_t nn = taps * taps;
#pragma omp parallel for schedule(static)
    for (int64_t p = 0; p < hw; ++p) {
        const int64_t i = p / wdt;
        const int64_t j = p % wdt;
        for (int64_t ch = 0; ch < c; ++ch) out[ch * hw + p] = 0.0;
        for (int64_t t = 0; t < nn; ++t) {
            const int64_t a = t / taps;
            const int64_t b = t % taps;
            const double coef = w[t * hw + p] * kv[a * hw + p] * kh[b * hw + p];
            const double sx = static_cast<double>(j + b - half) + px[t * hw + p];
            const double sy = static_cast<double>(i + a - half) + py[t * hw + p];
            for (int64_t ch = 0; ch < c; ++ch) {
                out[ch * hw + p] +=
                    coef * bilinear_fetch(fe + ch * hw, h, wdt, sx, sy);
            }
        }
    }
}

void voxel_accum(const uint16_t* xs, const uint16_t* ys,
                 const int8_t* ps, const int32_t* bins, int64_t n_events,
                 int64_t b, int64_t h, int64_t w, int64_t* acc) {
#ifdef _OPENMP
    const int64_t cells = b * h * w;
    const int64_t hw = h * w;
    int nthreads = 1;
#pragma omp parallel
    {
#pragma omp single
        nthreads = omp_get_num_threads();
    }
    if (nthreads <= 1) {
        serial::voxel_accum(xs, ys, ps, bins, n_events, b, h, w, acc);
        return;
    }
    std::vector<int64_t> shards(static_cast<size_t>(nthreads) * cells, 0);
#pragma omp parallel
    {
        int64_t* local = shards.data() + omp_get_thread_num() * cells;
#pragma omp for schedule(static)
        for (int64_t e = 0; e < n_events; ++e) {
            local[static_cast<int64_t>(bins[e]) * hw +
                  static_cast<int64_t>(ys[e]) * w + xs[e]] += ps[e];
        }
    }
    for (int t = 0; t < nthreads; ++t) {
        const int64_t* local = shards.data() + static_cast<int64_t>(t) * cells;
        for (int64_t i = 0; i < cells; ++i) acc[i] += local[i];
    }
#else
    serial::voxel_accum(xs, ys, ps, bins, n_events, b, h, w, acc);
#endif
}

} // namespace evlie::kernels::par

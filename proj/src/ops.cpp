#include "evlie/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "evlie/errors.hpp"
#include "evlie/kernels.hpp"

namespace evlie::ops {

namespace {

std::string shape_str(const std::vector<int64_t>& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

const TensorNode& ref(const Tensor& t, const char* op) {
    if (!t) throw ArgumentError(std::string(op) + ": null tensor");
    return *t;
}

Tensor make_node(std::vector<int64_t> shape, std::vector<Tensor> parents) {
    auto t = std::make_shared<TensorNode>();
    t->shape = std::move(shape);
    t->value.assign(static_cast<size_t>(t->numel()), 0.0);
    for (const Tensor& p : parents) {
        if (p && p->requires_grad) t->requires_grad = true;
    }
    t->parents = std::move(parents);
    return t;
}

int normalize_axis(int axis, size_t rank, const char* op) {
    const int r = static_cast<int>(rank);
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
        throw ArgumentError(std::string(op) + ": axis out of range for rank " +
                            std::to_string(r));
    }
    return axis;
}

// outer/len/inner decomposition of one axis: element (o, i, j) lives at
// offset (o * len + i) * inner + j
struct AxisSplit {
    int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const std::vector<int64_t>& shape, int axis) {
    AxisSplit s;
    for (int d = 0; d < axis; ++d) s.outer *= shape[d];
    s.len = shape[axis];
    for (size_t d = axis + 1; d < shape.size(); ++d) s.inner *= shape[d];
    return s;
}

// Index translation for elementwise broadcasting: identity, scalar, or
// tiled suffix (i mod m).
struct IdxMap {
    int mode = 0;
    int64_t m = 1;
    int64_t operator()(int64_t i) const {
        switch (mode) {
            case 0: return i;
            case 1: return 0;
            default: return i % m;
        }
    }
};

bool ends_with(const std::vector<int64_t>& big,
               const std::vector<int64_t>& small) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Broadcasting is limited to a scalar operand or one whose shape is a
// trailing suffix of the other's (tiled over the leading dimensions).
void broadcast_plan(const TensorNode& a, const TensorNode& b,
                    std::vector<int64_t>& out_shape, IdxMap& ma, IdxMap& mb,
                    const char* op) {
    ma = IdxMap{};
    mb = IdxMap{};
    if (a.shape == b.shape) {
        out_shape = a.shape;
        return;
    }
    if (b.numel() == 1) {
        out_shape = a.shape;
        mb.mode = 1;
        return;
    }
    if (a.numel() == 1) {
        out_shape = b.shape;
        ma.mode = 1;
        return;
    }
    if (ends_with(a.shape, b.shape)) {
        out_shape = a.shape;
        mb = IdxMap{2, b.numel()};
        return;
    }
    if (ends_with(b.shape, a.shape)) {
        out_shape = b.shape;
        ma = IdxMap{2, a.numel()};
        return;
    }
    throw ArgumentError(std::string(op) + ": shapes " + shape_str(a.shape) +
                        " and " + shape_str(b.shape) + " do not broadcast");
}

// Bilinear corner data matching kernels::bilinear_fetch exactly.
struct Corners {
    bool inside = false;
    int64_t x0 = 0, y0 = 0;
    double fx = 0.0, fy = 0.0;
    bool ok00 = false, ok01 = false, ok10 = false, ok11 = false;
};

Corners corners_at(double x, double y, int64_t h, int64_t w) {
    Corners c;
    if (x <= -1.0 || x >= static_cast<double>(w) || y <= -1.0 ||
        y >= static_cast<double>(h)) {
        return c;
    }
    c.inside = true;
    // Exact floor, matching kernels::bilinear_fetch: trunc then adjust,
    // never floating-point subtraction that can double-round.
    c.x0 = static_cast<int64_t>(x);
    c.y0 = static_cast<int64_t>(y);
    if (static_cast<double>(c.x0) > x) --c.x0;
    if (static_cast<double>(c.y0) > y) --c.y0;
    c.fx = x - static_cast<double>(c.x0);
    c.fy = y - static_cast<double>(c.y0);
    c.ok00 = c.y0 >= 0 && c.x0 >= 0;
    c.ok01 = c.y0 >= 0 && c.x0 + 1 < w;
    c.ok10 = c.y0 + 1 < h && c.x0 >= 0;
    c.ok11 = c.y0 + 1 < h && c.x0 + 1 < w;
    return c;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    ref(a, "add");
    ref(b, "add");
    std::vector<int64_t> out_shape;
    IdxMap ma, mb;
    broadcast_plan(*a, *b, out_shape, ma, mb, "add");
    Tensor out = make_node(std::move(out_shape), {a, b});
    out->op = "add";
    const int64_t n = out->numel();
    for (int64_t i = 0; i < n; ++i) {
        out->value[i] = a->value[ma(i)] + b->value[mb(i)];
    }
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* pa = a.get();
        TensorNode* pb = b.get();
        out->backprop = [o, pa, pb, ma, mb, n] {
            if (pa->requires_grad) {
                for (int64_t i = 0; i < n; ++i) pa->grad[ma(i)] += o->grad[i];
            }
            if (pb->requires_grad) {
                for (int64_t i = 0; i < n; ++i) pb->grad[mb(i)] += o->grad[i];
            }
        };
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    ref(a, "sub");
    ref(b, "sub");
    std::vector<int64_t> out_shape;
    IdxMap ma, mb;
    broadcast_plan(*a, *b, out_shape, ma, mb, "sub");
    Tensor out = make_node(std::move(out_shape), {a, b});
    out->op = "sub";
    const int64_t n = out->numel();
    for (int64_t i = 0; i < n; ++i) {
        out->value[i] = a->value[ma(i)] - b->value[mb(i)];
    }
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* pa = a.get();
        TensorNode* pb = b.get();
        out->backprop = [o, pa, pb, ma, mb, n] {
            if (pa->requires_grad) {
                for (int64_t i = 0; i < n; ++i) pa->grad[ma(i)] += o->grad[i];
            }
            if (pb->requires_grad) {
                for (int64_t i = 0; i < n; ++i) pb->grad[mb(i)] -= o->grad[i];
            }
        };
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    ref(a, "mul");
    ref(b, "mul");
    std::vector<int64_t> out_shape;
    IdxMap ma, mb;
    broadcast_plan(*a, *b, out_shape, ma, mb, "mul");
    Tensor out = make_node(std::move(out_shape), {a, b});
    out->op = "mul";
    const int64_t n = out->numel();
    for (int64_t i = 0; i < n; ++i) {
        out->value[i] = a->value[ma(i)] * b->value[mb(i)];
    }
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* pa = a.get();
        TensorNode* pb = b.get();
        out->backprop = [o, pa, pb, ma, mb, n] {
            if (pa->requires_grad) {
                for (int64_t i = 0; i < n; ++i) {
                    pa->grad[ma(i)] += o->grad[i] * pb->value[mb(i)];
                }
            }
            if (pb->requires_grad) {
                for (int64_t i = 0; i < n; ++i) {
                    pb->grad[mb(i)] += o->grad[i] * pa->value[ma(i)];
                }
            }
        };
    }
    return out;
}

Tensor scale(const Tensor& a, double k) {
    ref(a, "scale");
    Tensor out = make_node(a->shape, {a});
    out->op = "scale";
    const int64_t n = out->numel();
    for (int64_t i = 0; i < n; ++i) out->value[i] = k * a->value[i];
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* pa = a.get();
        out->backprop = [o, pa, k, n] {
            for (int64_t i = 0; i < n; ++i) pa->grad[i] += k * o->grad[i];
        };
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    ref(a, "matmul");
    ref(b, "matmul");
    if (a->shape.size() != 2 || b->shape.size() != 2) {
        throw ArgumentError("matmul: needs 2-D operands, got " +
                            shape_str(a->shape) + " and " +
                            shape_str(b->shape));
    }
    const int64_t m = a->shape[0];
    const int64_t k = a->shape[1];
    const int64_t n = b->shape[1];
    if (b->shape[0] != k) {
        throw ArgumentError("matmul: inner dimensions disagree, " +
                            shape_str(a->shape) + " vs " +
                            shape_str(b->shape));
    }
    Tensor out = make_node({m, n}, {a, b});
    out->op = "matmul";
    kernels::matmul(a->value.data(), b->value.data(), out->value.data(), m, k,
                    n);
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* pa = a.get();
        TensorNode* pb = b.get();
        out->backprop = [o, pa, pb, m, k, n] {
            if (pa->requires_grad) {
                // dA = G * B^T
                std::vector<double> bt(static_cast<size_t>(n) * k);
                for (int64_t p = 0; p < k; ++p) {
                    for (int64_t j = 0; j < n; ++j) {
                        bt[j * k + p] = pb->value[p * n + j];
                    }
                }
                std::vector<double> tmp(static_cast<size_t>(m) * k);
                kernels::matmul(o->grad.data(), bt.data(), tmp.data(), m, n, k);
                for (size_t i = 0; i < tmp.size(); ++i) pa->grad[i] += tmp[i];
            }
            if (pb->requires_grad) {
                // dB = A^T * G
                std::vector<double> at(static_cast<size_t>(k) * m);
                for (int64_t i = 0; i < m; ++i) {
                    for (int64_t p = 0; p < k; ++p) {
                        at[p * m + i] = pa->value[i * k + p];
                    }
                }
                std::vector<double> tmp(static_cast<size_t>(k) * n);
                kernels::matmul(at.data(), o->grad.data(), tmp.data(), k, m, n);
                for (size_t i = 0; i < tmp.size(); ++i) pb->grad[i] += tmp[i];
            }
        };
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    ref(a, "transpose");
    if (a->shape.size() != 2) {
        throw ArgumentError("transpose: needs a 2-D tensor, got " +
                            shape_str(a->shape));
    }
    const int64_t m = a->shape[0];
    const int64_t n = a->shape[1];
    Tensor out = make_node({n, m}, {a});
    out->op = "transpose";
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            out->value[j * m + i] = a->value[i * n + j];
        }
    }
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* pa = a.get();
        out->backprop = [o, pa, m, n] {
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < n; ++j) {
                    pa->grad[i * n + j] += o->grad[j * m + i];
                }
            }
        };
    }
    return out;
}

Tensor relu(const Tensor& a) {
    ref(a, "relu");
    Tensor out = make_node(a->shape, {a});
    out->op = "relu";
    const int64_t n = out->numel();
    for (int64_t i = 0; i < n; ++i) {
        out->value[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
    }
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* pa = a.get();
        out->backprop = [o, pa, n] {
            for (int64_t i = 0; i < n; ++i) {
                if (pa->value[i] > 0.0) pa->grad[i] += o->grad[i];
            }
        };
    }
    return out;
}

Tensor sigmoid(const Tensor& a) {
    ref(a, "sigmoid");
    Tensor out = make_node(a->shape, {a});
    out->op = "sigmoid";
    const int64_t n = out->numel();
    for (int64_t i = 0; i < n; ++i) {
        out->value[i] = 1.0 / (1.0 + std::exp(-a->value[i]));
    }
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* pa = a.get();
        out->backprop = [o, pa, n] {
            for (int64_t i = 0; i < n; ++i) {
                const double s = o->value[i];
                pa->grad[i] += o->grad[i] * s * (1.0 - s);
            }
        };
    }
    return out;
}

Tensor tanh(const Tensor& a) {
    ref(a, "tanh");
    Tensor out = make_node(a->shape, {a});
    out->op = "tanh";
    const int64_t n = out->numel();
    for (int64_t i = 0; i < n; ++i) out->value[i] = std::tanh(a->value[i]);
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* pa = a.get();
        out->backprop = [o, pa, n] {
            for (int64_t i = 0; i < n; ++i) {
                const double y = o->value[i];
                pa->grad[i] += o->grad[i] * (1.0 - y * y);
            }
        };
    }
    return out;
}

Tensor exp(const Tensor& a) {
    ref(a, "exp");
    Tensor out = make_node(a->shape, {a});
    out->op = "exp";
    const int64_t n = out->numel();
    for (int64_t i = 0; i < n; ++i) out->value[i] = std::exp(a->value[i]);
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* pa = a.get();
        out->backprop = [o, pa, n] {
            for (int64_t i = 0; i < n; ++i) {
                pa->grad[i] += o->grad[i] * o->value[i];
            }
        };
    }
    return out;
}

Tensor abs(const Tensor& a) {
    ref(a, "abs");
    Tensor out = make_node(a->shape, {a});
    out->op = "abs";
    const int64_t n = out->numel();
    for (int64_t i = 0; i < n; ++i) out->value[i] = std::fabs(a->value[i]);
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* pa = a.get();
        out->backprop = [o, pa, n] {
            for (int64_t i = 0; i < n; ++i) {
                const double x = pa->value[i];
                if (x > 0.0) {
                    pa->grad[i] += o->grad[i];
                } else if (x < 0.0) {
                    pa->grad[i] -= o->grad[i];
                }
            }
        };
    }
    return out;
}

Tensor softmax(const Tensor& a, int axis) {
    ref(a, "softmax");
    const int ax = normalize_axis(axis, a->shape.size(), "softmax");
    const AxisSplit s = split_axis(a->shape, ax);
    Tensor out = make_node(a->shape, {a});
    out->op = "softmax";
    for (int64_t o = 0; o < s.outer; ++o) {
        for (int64_t j = 0; j < s.inner; ++j) {
            const int64_t base = o * s.len * s.inner + j;
            double mx = a->value[base];
            for (int64_t i = 1; i < s.len; ++i) {
                mx = std::max(mx, a->value[base + i * s.inner]);
            }
            double sum = 0.0;
            for (int64_t i = 0; i < s.len; ++i) {
                const double e = std::exp(a->value[base + i * s.inner] - mx);
                out->value[base + i * s.inner] = e;
                sum += e;
            }
            for (int64_t i = 0; i < s.len; ++i) {
                out->value[base + i * s.inner] /= sum;
            }
        }
    }
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* pa = a.get();
        out->backprop = [o, pa, s] {
            for (int64_t ot = 0; ot < s.outer; ++ot) {
                for (int64_t j = 0; j < s.inner; ++j) {
                    const int64_t base = ot * s.len * s.inner + j;
                    double dot = 0.0;
                    for (int64_t i = 0; i < s.len; ++i) {
                        const int64_t k = base + i * s.inner;
                        dot += o->grad[k] * o->value[k];
                    }
                    for (int64_t i = 0; i < s.len; ++i) {
                        const int64_t k = base + i * s.inner;
                        pa->grad[k] += o->value[k] * (o->grad[k] - dot);
                    }
                }
            }
        };
    }
    return out;
}

Tensor l2_normalize(const Tensor& a, int axis, double eps) {
    ref(a, "l2_normalize");
    const int ax = normalize_axis(axis, a->shape.size(), "l2_normalize");
    const AxisSplit s = split_axis(a->shape, ax);
    Tensor out = make_node(a->shape, {a});
    out->op = "l2_normalize";
    auto inv = std::make_shared<std::vector<double>>(
        static_cast<size_t>(s.outer * s.inner));
    for (int64_t o = 0; o < s.outer; ++o) {
        for (int64_t j = 0; j < s.inner; ++j) {
            const int64_t base = o * s.len * s.inner + j;
            double s2 = 0.0;
            for (int64_t i = 0; i < s.len; ++i) {
                const double v = a->value[base + i * s.inner];
                s2 += v * v;
            }
            const double iv = 1.0 / std::sqrt(s2 + eps);
            (*inv)[o * s.inner + j] = iv;
            for (int64_t i = 0; i < s.len; ++i) {
                out->value[base + i * s.inner] =
                    a->value[base + i * s.inner] * iv;
            }
        }
    }
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* pa = a.get();
        out->backprop = [o, pa, s, inv] {
            for (int64_t ot = 0; ot < s.outer; ++ot) {
                for (int64_t j = 0; j < s.inner; ++j) {
                    const int64_t base = ot * s.len * s.inner + j;
                    const double iv = (*inv)[ot * s.inner + j];
                    double dot = 0.0;
                    for (int64_t i = 0; i < s.len; ++i) {
                        const int64_t k = base + i * s.inner;
                        dot += o->grad[k] * pa->value[k];
                    }
                    const double iv3 = iv * iv * iv;
                    for (int64_t i = 0; i < s.len; ++i) {
                        const int64_t k = base + i * s.inner;
                        pa->grad[k] +=
                            iv * o->grad[k] - iv3 * pa->value[k] * dot;
                    }
                }
            }
        };
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
    ref(x, "layer_norm");
    ref(gamma, "layer_norm");
    ref(beta, "layer_norm");
    if (x->shape.empty()) {
        throw ArgumentError("layer_norm: needs rank >= 1");
    }
    const int64_t d = x->shape.back();
    if (gamma->shape != std::vector<int64_t>{d} ||
        beta->shape != std::vector<int64_t>{d}) {
        throw ArgumentError("layer_norm: gamma/beta must have shape (" +
                            std::to_string(d) + ")");
    }
    const int64_t rows = x->numel() / d;
    Tensor out = make_node(x->shape, {x, gamma, beta});
    out->op = "layer_norm";
    auto xhat =
        std::make_shared<std::vector<double>>(static_cast<size_t>(rows * d));
    auto inv = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* xv = x->value.data() + r * d;
        double mu = 0.0;
        for (int64_t i = 0; i < d; ++i) mu += xv[i];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            const double c = xv[i] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double iv = 1.0 / std::sqrt(var + eps);
        (*inv)[r] = iv;
        for (int64_t i = 0; i < d; ++i) {
            const double xh = (xv[i] - mu) * iv;
            (*xhat)[r * d + i] = xh;
            out->value[r * d + i] = xh * gamma->value[i] + beta->value[i];
        }
    }
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* px = x.get();
        TensorNode* pg = gamma.get();
        TensorNode* pb = beta.get();
        out->backprop = [o, px, pg, pb, rows, d, xhat, inv] {
            for (int64_t r = 0; r < rows; ++r) {
                const double* g = o->grad.data() + r * d;
                const double* xh = xhat->data() + r * d;
                if (pg->requires_grad) {
                    for (int64_t i = 0; i < d; ++i) {
                        pg->grad[i] += g[i] * xh[i];
                    }
                }
                if (pb->requires_grad) {
                    for (int64_t i = 0; i < d; ++i) pb->grad[i] += g[i];
                }
                if (px->requires_grad) {
                    double m1 = 0.0, m2 = 0.0;
                    for (int64_t i = 0; i < d; ++i) {
                        const double dxh = g[i] * pg->value[i];
                        m1 += dxh;
                        m2 += dxh * xh[i];
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    const double iv = (*inv)[r];
                    for (int64_t i = 0; i < d; ++i) {
                        const double dxh = g[i] * pg->value[i];
                        px->grad[r * d + i] += (dxh - m1 - xh[i] * m2) * iv;
                    }
                }
            }
        };
    }
    return out;
}

Tensor conv2d_dw(const Tensor& x, const Tensor& k, const Tensor& bias) {
    ref(x, "conv2d_dw");
    ref(k, "conv2d_dw");
    if (x->shape.size() != 3 || k->shape.size() != 3) {
        throw ArgumentError("conv2d_dw: x and k must be rank 3, got " +
                            shape_str(x->shape) + " and " +
                            shape_str(k->shape));
    }
    const int64_t c = x->shape[0];
    const int64_t h = x->shape[1];
    const int64_t w = x->shape[2];
    const int64_t kh = k->shape[1];
    const int64_t kw = k->shape[2];
    if (k->shape[0] != c) {
        throw ArgumentError("conv2d_dw: kernel channels " +
                            std::to_string(k->shape[0]) + " != input " +
                            std::to_string(c));
    }
    if (kh % 2 == 0 || kw % 2 == 0) {
        throw ArgumentError("conv2d_dw: kernel sides must be odd, got " +
                            std::to_string(kh) + "x" + std::to_string(kw));
    }
    if (bias && bias->shape != std::vector<int64_t>{c}) {
        throw ArgumentError("conv2d_dw: bias must have shape (" +
                            std::to_string(c) + ")");
    }
    std::vector<Tensor> parents = {x, k};
    if (bias) parents.push_back(bias);
    Tensor out = make_node(x->shape, std::move(parents));
    out->op = "conv2d_dw";
    kernels::conv2d_dw(x->value.data(), k->value.data(),
                       bias ? bias->value.data() : nullptr, out->value.data(),
                       c, h, w, kh, kw);
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* px = x.get();
        TensorNode* pk = k.get();
        TensorNode* pbias = bias ? bias.get() : nullptr;
        out->backprop = [o, px, pk, pbias, c, h, w, kh, kw] {
            const int64_t ph = kh / 2;
            const int64_t pw = kw / 2;
            const int64_t hw = h * w;
            for (int64_t ch = 0; ch < c; ++ch) {
                const double* g = o->grad.data() + ch * hw;
                const double* xv = px->value.data() + ch * hw;
                const double* kv = pk->value.data() + ch * kh * kw;
                for (int64_t i = 0; i < h; ++i) {
                    for (int64_t j = 0; j < w; ++j) {
                        const double gv = g[i * w + j];
                        if (gv == 0.0) continue;
                        for (int64_t u = 0; u < kh; ++u) {
                            const int64_t ii = i + u - ph;
                            if (ii < 0 || ii >= h) continue;
                            for (int64_t v = 0; v < kw; ++v) {
                                const int64_t jj = j + v - pw;
                                if (jj < 0 || jj >= w) continue;
                                if (px->requires_grad) {
                                    px->grad[ch * hw + ii * w + jj] +=
                                        gv * kv[u * kw + v];
                                }
                                if (pk->requires_grad) {
                                    pk->grad[ch * kh * kw + u * kw + v] +=
                                        gv * xv[ii * w + jj];
                                }
                            }
                        }
                    }
                }
                if (pbias && pbias->requires_grad) {
                    double s = 0.0;
                    for (int64_t p = 0; p < hw; ++p) s += g[p];
                    pbias->grad[ch] += s;
                }
            }
        };
    }
    return out;
}

Tensor conv2d_pw(const Tensor& x, const Tensor& w, const Tensor& bias) {
    ref(x, "conv2d_pw");
    ref(w, "conv2d_pw");
    if (x->shape.size() != 3 || w->shape.size() != 2) {
        throw ArgumentError("conv2d_pw: wants x rank 3 and w rank 2, got " +
                            shape_str(x->shape) + " and " +
                            shape_str(w->shape));
    }
    const int64_t cin = x->shape[0];
    const int64_t hh = x->shape[1];
    const int64_t ww = x->shape[2];
    const int64_t cout = w->shape[0];
    if (w->shape[1] != cin) {
        throw ArgumentError("conv2d_pw: weight columns " +
                            std::to_string(w->shape[1]) + " != input channels " +
                            std::to_string(cin));
    }
    if (bias && bias->shape != std::vector<int64_t>{cout}) {
        throw ArgumentError("conv2d_pw: bias must have shape (" +
                            std::to_string(cout) + ")");
    }
    std::vector<Tensor> parents = {x, w};
    if (bias) parents.push_back(bias);
    Tensor out = make_node({cout, hh, ww}, std::move(parents));
    out->op = "conv2d_pw";
    kernels::conv2d_pw(x->value.data(), w->value.data(),
                       bias ? bias->value.data() : nullptr, out->value.data(),
                       cin, cout, hh, ww);
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* px = x.get();
        TensorNode* pw = w.get();
        TensorNode* pbias = bias ? bias.get() : nullptr;
        const int64_t hw = hh * ww;
        out->backprop = [o, px, pw, pbias, cin, cout, hw] {
            if (px->requires_grad) {
                for (int64_t co = 0; co < cout; ++co) {
                    const double* g = o->grad.data() + co * hw;
                    const double* wr = pw->value.data() + co * cin;
                    for (int64_t ci = 0; ci < cin; ++ci) {
                        double* dx = px->grad.data() + ci * hw;
                        const double wv = wr[ci];
                        for (int64_t p = 0; p < hw; ++p) dx[p] += wv * g[p];
                    }
                }
            }
            if (pw->requires_grad) {
                for (int64_t co = 0; co < cout; ++co) {
                    const double* g = o->grad.data() + co * hw;
                    for (int64_t ci = 0; ci < cin; ++ci) {
                        const double* xv = px->value.data() + ci * hw;
                        double s = 0.0;
                        for (int64_t p = 0; p < hw; ++p) s += g[p] * xv[p];
                        pw->grad[co * cin + ci] += s;
                    }
                }
            }
            if (pbias && pbias->requires_grad) {
                for (int64_t co = 0; co < cout; ++co) {
                    const double* g = o->grad.data() + co * hw;
                    double s = 0.0;
                    for (int64_t p = 0; p < hw; ++p) s += g[p];
                    pbias->grad[co] += s;
                }
            }
        };
    }
    return out;
}

Tensor reshape(const Tensor& a, std::vector<int64_t> shape) {
    ref(a, "reshape");
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw ArgumentError("reshape: dimensions must be positive");
        n *= d;
    }
    if (n != a->numel()) {
        throw ArgumentError("reshape: cannot view " + shape_str(a->shape) +
                            " as " + shape_str(shape));
    }
    Tensor out = make_node(std::move(shape), {a});
    out->op = "reshape";
    out->value = a->value;
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* pa = a.get();
        out->backprop = [o, pa, n] {
            for (int64_t i = 0; i < n; ++i) pa->grad[i] += o->grad[i];
        };
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ArgumentError("concat: needs at least one part");
    for (const Tensor& p : parts) ref(p, "concat");
    const size_t rank = parts[0]->shape.size();
    const int ax = normalize_axis(axis, rank, "concat");
    std::vector<int64_t> out_shape = parts[0]->shape;
    out_shape[ax] = 0;
    for (const Tensor& p : parts) {
        if (p->shape.size() != rank) {
            throw ArgumentError("concat: rank mismatch");
        }
        for (size_t d = 0; d < rank; ++d) {
            if (static_cast<int>(d) != ax && p->shape[d] != parts[0]->shape[d]) {
                throw ArgumentError("concat: shapes " +
                                    shape_str(parts[0]->shape) + " and " +
                                    shape_str(p->shape) +
                                    " differ off the concat axis");
            }
        }
        out_shape[ax] += p->shape[ax];
    }
    Tensor out = make_node(out_shape, parts);
    out->op = "concat";
    const AxisSplit s = split_axis(out_shape, ax);
    int64_t written = 0;
    for (const Tensor& p : parts) {
        const int64_t len = p->shape[ax];
        const int64_t chunk = len * s.inner;
        for (int64_t o = 0; o < s.outer; ++o) {
            std::copy_n(p->value.data() + o * chunk, chunk,
                        out->value.data() + (o * s.len + written) * s.inner);
        }
        written += len;
    }
    if (out->requires_grad) {
        TensorNode* o = out.get();
        std::vector<TensorNode*> raw;
        std::vector<int64_t> lens;
        for (const Tensor& p : parts) {
            raw.push_back(p.get());
            lens.push_back(p->shape[ax]);
        }
        out->backprop = [o, raw, lens, s] {
            int64_t start = 0;
            for (size_t pi = 0; pi < raw.size(); ++pi) {
                const int64_t chunk = lens[pi] * s.inner;
                if (raw[pi]->requires_grad) {
                    for (int64_t ot = 0; ot < s.outer; ++ot) {
                        const double* src =
                            o->grad.data() + (ot * s.len + start) * s.inner;
                        double* dst = raw[pi]->grad.data() + ot * chunk;
                        for (int64_t i = 0; i < chunk; ++i) dst[i] += src[i];
                    }
                }
                start += lens[pi];
            }
        };
    }
    return out;
}

Tensor reduce_sum(const Tensor& a, int axis) {
    ref(a, "reduce_sum");
    const int ax = normalize_axis(axis, a->shape.size(), "reduce_sum");
    const AxisSplit s = split_axis(a->shape, ax);
    std::vector<int64_t> out_shape;
    for (size_t d = 0; d < a->shape.size(); ++d) {
        if (static_cast<int>(d) != ax) out_shape.push_back(a->shape[d]);
    }
    if (out_shape.empty()) out_shape = {1};
    Tensor out = make_node(std::move(out_shape), {a});
    out->op = "reduce_sum";
    for (int64_t o = 0; o < s.outer; ++o) {
        for (int64_t j = 0; j < s.inner; ++j) {
            double sum = 0.0;
            for (int64_t i = 0; i < s.len; ++i) {
                sum += a->value[(o * s.len + i) * s.inner + j];
            }
            out->value[o * s.inner + j] = sum;
        }
    }
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* pa = a.get();
        out->backprop = [o, pa, s] {
            for (int64_t ot = 0; ot < s.outer; ++ot) {
                for (int64_t j = 0; j < s.inner; ++j) {
                    const double g = o->grad[ot * s.inner + j];
                    for (int64_t i = 0; i < s.len; ++i) {
                        pa->grad[(ot * s.len + i) * s.inner + j] += g;
                    }
                }
            }
        };
    }
    return out;
}

Tensor reduce_sum_all(const Tensor& a) {
    ref(a, "reduce_sum_all");
    Tensor out = make_node({1}, {a});
    out->op = "reduce_sum_all";
    double sum = 0.0;
    for (double v : a->value) sum += v;
    out->value[0] = sum;
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* pa = a.get();
        const int64_t n = a->numel();
        out->backprop = [o, pa, n] {
            const double g = o->grad[0];
            for (int64_t i = 0; i < n; ++i) pa->grad[i] += g;
        };
    }
    return out;
}

Tensor bilinear_sample(const Tensor& x, const Tensor& px, const Tensor& py) {
    ref(x, "bilinear_sample");
    ref(px, "bilinear_sample");
    ref(py, "bilinear_sample");
    if (x->shape.size() != 3) {
        throw ArgumentError("bilinear_sample: image must be rank 3, got " +
                            shape_str(x->shape));
    }
    if (px->shape != py->shape || px->shape.size() != 1) {
        throw ArgumentError(
            "bilinear_sample: px and py must be equal-length vectors");
    }
    const int64_t c = x->shape[0];
    const int64_t h = x->shape[1];
    const int64_t w = x->shape[2];
    const int64_t np = px->shape[0];
    for (int64_t p = 0; p < np; ++p) {
        if (!std::isfinite(px->value[p]) || !std::isfinite(py->value[p])) {
            throw NumericError("bilinear_sample: non-finite coordinate at " +
                               std::to_string(p));
        }
    }
    Tensor out = make_node({c, np}, {x, px, py});
    out->op = "bilinear_sample";
    for (int64_t ch = 0; ch < c; ++ch) {
        const double* plane = x->value.data() + ch * h * w;
        for (int64_t p = 0; p < np; ++p) {
            out->value[ch * np + p] = kernels::bilinear_fetch(
                plane, h, w, px->value[p], py->value[p]);
        }
    }
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* pimg = x.get();
        TensorNode* ppx = px.get();
        TensorNode* ppy = py.get();
        out->backprop = [o, pimg, ppx, ppy, c, h, w, np] {
            const int64_t hw = h * w;
            for (int64_t p = 0; p < np; ++p) {
                const Corners cr =
                    corners_at(ppx->value[p], ppy->value[p], h, w);
                if (!cr.inside) continue;
                const double w00 = (1.0 - cr.fy) * (1.0 - cr.fx);
                const double w01 = (1.0 - cr.fy) * cr.fx;
                const double w10 = cr.fy * (1.0 - cr.fx);
                const double w11 = cr.fy * cr.fx;
                double dpx = 0.0, dpy = 0.0;
                for (int64_t ch = 0; ch < c; ++ch) {
                    const double g = o->grad[ch * np + p];
                    const double* plane = pimg->value.data() + ch * hw;
                    const double v00 =
                        cr.ok00 ? plane[cr.y0 * w + cr.x0] : 0.0;
                    const double v01 =
                        cr.ok01 ? plane[cr.y0 * w + cr.x0 + 1] : 0.0;
                    const double v10 =
                        cr.ok10 ? plane[(cr.y0 + 1) * w + cr.x0] : 0.0;
                    const double v11 =
                        cr.ok11 ? plane[(cr.y0 + 1) * w + cr.x0 + 1] : 0.0;
                    dpx += g * ((1.0 - cr.fy) * (v01 - v00) +
                                cr.fy * (v11 - v10));
                    dpy += g * ((1.0 - cr.fx) * (v10 - v00) +
                                cr.fx * (v11 - v01));
                    if (pimg->requires_grad && g != 0.0) {
                        double* dplane = pimg->grad.data() + ch * hw;
                        if (cr.ok00) dplane[cr.y0 * w + cr.x0] += g * w00;
                        if (cr.ok01) dplane[cr.y0 * w + cr.x0 + 1] += g * w01;
                        if (cr.ok10) dplane[(cr.y0 + 1) * w + cr.x0] += g * w10;
                        if (cr.ok11) {
                            dplane[(cr.y0 + 1) * w + cr.x0 + 1] += g * w11;
                        }
                    }
                }
                if (ppx->requires_grad) ppx->grad[p] += dpx;
                if (ppy->requires_grad) ppy->grad[p] += dpy;
            }
        };
    }
    return out;
}

Tensor iaef_apply(const Tensor& fe, const Tensor& kv, const Tensor& kh,
                  const Tensor& w, const Tensor& px, const Tensor& py) {
    ref(fe, "iaef_apply");
    ref(kv, "iaef_apply");
    ref(kh, "iaef_apply");
    ref(w, "iaef_apply");
    ref(px, "iaef_apply");
    ref(py, "iaef_apply");
    if (fe->shape.size() != 3 || kv->shape.size() != 3 ||
        kh->shape.size() != 3 || w->shape.size() != 3 ||
        px->shape.size() != 3 || py->shape.size() != 3) {
        throw ArgumentError("iaef_apply: all operands must be rank 3");
    }
    const int64_t c = fe->shape[0];
    const int64_t h = fe->shape[1];
    const int64_t wd = fe->shape[2];
    const int64_t n = kv->shape[0];
    const int64_t nn = n * n;
    auto plane_match = [&](const Tensor& t, int64_t ch0, const char* name) {
        if (t->shape[0] != ch0 || t->shape[1] != h || t->shape[2] != wd) {
            throw ArgumentError(std::string("iaef_apply: ") + name +
                                " must be (" + std::to_string(ch0) + "," +
                                std::to_string(h) + "," + std::to_string(wd) +
                                "), got " + shape_str(t->shape));
        }
    };
    plane_match(kv, n, "kv");
    plane_match(kh, n, "kh");
    plane_match(w, nn, "w");
    plane_match(px, nn, "px");
    plane_match(py, nn, "py");
    for (const Tensor* t : {&px, &py}) {
        for (double v : (*t)->value) {
            if (!std::isfinite(v)) {
                throw NumericError("iaef_apply: non-finite sampling offset");
            }
        }
    }

    Tensor out = make_node(fe->shape, {fe, kv, kh, w, px, py});
    out->op = "iaef_apply";
    kernels::iaef_apply(fe->value.data(), kv->value.data(), kh->value.data(),
                        w->value.data(), px->value.data(), py->value.data(),
                        out->value.data(), c, h, wd, n);
    if (out->requires_grad) {
        TensorNode* o = out.get();
        TensorNode* pfe = fe.get();
        TensorNode* pkv = kv.get();
        TensorNode* pkh = kh.get();
        TensorNode* pww = w.get();
        TensorNode* ppx = px.get();
        TensorNode* ppy = py.get();
        out->backprop = [o, pfe, pkv, pkh, pww, ppx, ppy, c, h, wd, n, nn] {
            const int64_t hw = h * wd;
            const int64_t half = n / 2;
            for (int64_t i = 0; i < h; ++i) {
                for (int64_t j = 0; j < wd; ++j) {
                    const int64_t p = i * wd + j;
                    for (int64_t t = 0; t < nn; ++t) {
                        const int64_t a = t / n;
                        const int64_t b = t % n;
                        const double wv = pww->value[t * hw + p];
                        const double kvv = pkv->value[a * hw + p];
                        const double khv = pkh->value[b * hw + p];
                        const double coef = wv * kvv * khv;
                        const double sx = static_cast<double>(j + b - half) +
                                          ppx->value[t * hw + p];
                        const double sy = static_cast<double>(i + a - half) +
                                          ppy->value[t * hw + p];
                        const Corners cr = corners_at(sx, sy, h, wd);
                        if (!cr.inside) continue;
                        const double w00 = (1.0 - cr.fy) * (1.0 - cr.fx);
                        const double w01 = (1.0 - cr.fy) * cr.fx;
                        const double w10 = cr.fy * (1.0 - cr.fx);
                        const double w11 = cr.fy * cr.fx;
                        double gs = 0.0;   // sum_ch g * sample
                        double gdx = 0.0;  // sum_ch g * d(sample)/dx
                        double gdy = 0.0;
                        for (int64_t ch = 0; ch < c; ++ch) {
                            const double g = o->grad[ch * hw + p];
                            const double* plane = pfe->value.data() + ch * hw;
                            const double v00 =
                                cr.ok00 ? plane[cr.y0 * wd + cr.x0] : 0.0;
                            const double v01 =
                                cr.ok01 ? plane[cr.y0 * wd + cr.x0 + 1] : 0.0;
                            const double v10 =
                                cr.ok10 ? plane[(cr.y0 + 1) * wd + cr.x0]
                                        : 0.0;
                            const double v11 =
                                cr.ok11 ? plane[(cr.y0 + 1) * wd + cr.x0 + 1]
                                        : 0.0;
                            const double sample = w00 * v00 + w01 * v01 +
                                                  w10 * v10 + w11 * v11;
                            gs += g * sample;
                            gdx += g * ((1.0 - cr.fy) * (v01 - v00) +
                                        cr.fy * (v11 - v10));
                            gdy += g * ((1.0 - cr.fx) * (v10 - v00) +
                                        cr.fx * (v11 - v01));
                            if (pfe->requires_grad && g != 0.0) {
                                double* dplane = pfe->grad.data() + ch * hw;
                                const double gc = g * coef;
                                if (cr.ok00) {
                                    dplane[cr.y0 * wd + cr.x0] += gc * w00;
                                }
                                if (cr.ok01) {
                                    dplane[cr.y0 * wd + cr.x0 + 1] += gc * w01;
                                }
                                if (cr.ok10) {
                                    dplane[(cr.y0 + 1) * wd + cr.x0] +=
                                        gc * w10;
                                }
                                if (cr.ok11) {
                                    dplane[(cr.y0 + 1) * wd + cr.x0 + 1] +=
                                        gc * w11;
                                }
                            }
                        }
                        if (pww->requires_grad) {
                            pww->grad[t * hw + p] += kvv * khv * gs;
                        }
                        if (pkv->requires_grad) {
                            pkv->grad[a * hw + p] += wv * khv * gs;
                        }
                        if (pkh->requires_grad) {
                            pkh->grad[b * hw + p] += wv * kvv * gs;
                        }
                        if (ppx->requires_grad) {
                            ppx->grad[t * hw + p] += coef * gdx;
                        }
                        if (ppy->requires_grad) {
                            ppy->grad[t * hw + p] += coef * gdy;
                        }
                    }
                }
            }
        };
    }
    return out;
}

} // namespace evlie::ops

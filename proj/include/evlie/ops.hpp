#pragma once

#include "evlie/tensor.hpp"

namespace evlie::ops {

// Elementwise arithmetic. Mismatched shapes are allowed when the
// smaller operand is a scalar, or its shape is a prefix or suffix of
// the larger one; the smaller operand is tiled and its gradient
// sum-reduced over the tiled positions.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double k);

// 2-D matrix product, (m x k) * (k x n)
Tensor matmul(const Tensor& a, const Tensor& b);
// 2-D transpose
Tensor transpose(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
// d|x|/dx at 0 is taken as 0
Tensor abs(const Tensor& a);

// Numerically stable softmax along `axis` (negative counts from the
// back); slices along that axis sum to 1.
Tensor softmax(const Tensor& a, int axis);
// x / sqrt(sum(x^2) + eps) along `axis`
Tensor l2_normalize(const Tensor& a, int axis, double eps = 1e-12);
// Normalization over the last dimension with per-feature affine;
// gamma and beta have that dimension's length.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// Depthwise 2-D correlation, zero padding, stride 1. x: C x H x W,
// k: C x kh x kw with odd kh, kw; bias (C) may be null.
Tensor conv2d_dw(const Tensor& x, const Tensor& k, const Tensor& bias);
// 1x1 convolution. x: Cin x H x W, w: Cout x Cin; bias (Cout) may be
// null.
Tensor conv2d_pw(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor reshape(const Tensor& a, std::vector<int64_t> shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
// Sums out one axis; the result drops that dimension.
Tensor reduce_sum(const Tensor& a, int axis);
Tensor reduce_sum_all(const Tensor& a);

// Bilinear point sampling with zero padding. x: C x H x W, px and py
// hold P continuous coordinates; result is C x P. Differentiable in
// the image and in the coordinates.
Tensor bilinear_sample(const Tensor& x, const Tensor& px, const Tensor& py);

// Per-pixel separable filtering: taps of an n x n grid around each
// output pixel, sampled bilinearly at learned offsets, weighted by
// w[tap] * kv[row] * kh[col]. fe: C x H x W, kv and kh: n x H x W,
// w, px, py: n^2 x H x W. Single fused node with a hand-written
// backward pass.
Tensor iaef_apply(const Tensor& fe, const Tensor& kv, const Tensor& kh,
                  const Tensor& w, const Tensor& px, const Tensor& py);

} // namespace evlie::ops

#pragma once

#include <tuple>
#include <utility>

#include "evlie/tensor.hpp"

namespace evlie {

// Depthwise-separable conv head: pointwise(relu(depthwise 3x3)).
struct HeadParams {
    Tensor dw_k, dw_b; // Cin x 3 x 3, Cin
    Tensor pw_w, pw_b; // Cout x Cin, Cout
};

Tensor conv_head(const Tensor& x, const HeadParams& p);

struct IaefParams {
    int taps = 5;       // n, odd
    double r_max = 4.0; // sampling offset bound in pixels
    HeadParams kv_head, kh_head;         // from F_l, C -> n
    HeadParams w_head, px_head, py_head; // from F_e, C -> n^2
};

// Per-pixel separable filter description. kv/kh taps sum to 1 at every
// pixel, w lies in [0,1], offsets are bounded by r_max.
struct FilterFields {
    Tensor kv, kh;  // n x H x W
    Tensor w;       // n^2 x H x W
    Tensor px, py;  // n^2 x H x W
};

// Vertical/horizontal kernel taps from the illumination feature,
// softmax-normalized over the tap axis.
std::pair<Tensor, Tensor> extract_kernels(const Tensor& fl,
                                          const IaefParams& p);
// Tap weights (sigmoid) and sampling offsets (r_max * tanh) from the
// event feature.
std::tuple<Tensor, Tensor, Tensor> extract_weights_offsets(
    const Tensor& fe, const IaefParams& p);
FilterFields extract_filter_fields(const Tensor& fl, const Tensor& fe,
                                   const IaefParams& p);

// One continuous sample of a C x H x W map, zero padded; returns a
// length-C tensor, differentiable in the map.
Tensor bilinear_sample(const Tensor& f, double x, double y);

// Weighted, offset, kernel-modulated resampling of fe (see
// ops::iaef_apply for the tap arithmetic).
Tensor apply_iaef(const Tensor& fe, const FilterFields& fields);

// extract_filter_fields + apply_iaef in one call.
Tensor iaef_filter(const Tensor& fe, const Tensor& fl, const IaefParams& p);

} // namespace evlie

#include "evlie/iaef.hpp"

#include <cmath>
#include <string>

#include "evlie/errors.hpp"
#include "evlie/ops.hpp"

namespace evlie {

namespace {

void check_taps(int taps) {
    if (taps < 1 || taps % 2 == 0) {
        throw ArgumentError("IAEF tap count must be odd and >= 1, got " +
                            std::to_string(taps));
    }
}

Tensor head_to(const Tensor& x, const HeadParams& p, int64_t want,
               const char* name) {
    Tensor y = conv_head(x, p);
    if (y->shape[0] != want) {
        throw ArgumentError(std::string(name) + " head emits " +
                            std::to_string(y->shape[0]) + " channels, need " +
                            std::to_string(want));
    }
    return y;
}

} // namespace

Tensor conv_head(const Tensor& x, const HeadParams& p) {
    return ops::conv2d_pw(ops::relu(ops::conv2d_dw(x, p.dw_k, p.dw_b)), p.pw_w,
                          p.pw_b);
}

std::pair<Tensor, Tensor> extract_kernels(const Tensor& fl,
                                          const IaefParams& p) {
    check_taps(p.taps);
    Tensor kv = ops::softmax(head_to(fl, p.kv_head, p.taps, "K_v"), 0);
    Tensor kh = ops::softmax(head_to(fl, p.kh_head, p.taps, "K_h"), 0);
    return {kv, kh};
}

std::tuple<Tensor, Tensor, Tensor> extract_weights_offsets(
    const Tensor& fe, const IaefParams& p) {
    check_taps(p.taps);
    const int64_t nn = static_cast<int64_t>(p.taps) * p.taps;
    Tensor w = ops::sigmoid(head_to(fe, p.w_head, nn, "W"));
    Tensor px = ops::scale(ops::tanh(head_to(fe, p.px_head, nn, "P_x")),
                           p.r_max);
    Tensor py = ops::scale(ops::tanh(head_to(fe, p.py_head, nn, "P_y")),
                           p.r_max);
    return {w, px, py};
}

FilterFields extract_filter_fields(const Tensor& fl, const Tensor& fe,
                                   const IaefParams& p) {
    FilterFields f;
    std::tie(f.kv, f.kh) = extract_kernels(fl, p);
    std::tie(f.w, f.px, f.py) = extract_weights_offsets(fe, p);
    return f;
}

Tensor bilinear_sample(const Tensor& f, double x, double y) {
    Tensor px = make_tensor({1}, {x});
    Tensor py = make_tensor({1}, {y});
    Tensor s = ops::bilinear_sample(f, px, py); // C x 1
    return ops::reshape(s, {s->shape[0]});
}

Tensor apply_iaef(const Tensor& fe, const FilterFields& fields) {
    if (!fields.kv || fields.kv->shape.empty()) {
        throw ArgumentError("apply_iaef: empty filter fields");
    }
    check_taps(static_cast<int>(fields.kv->shape[0]));
    return ops::iaef_apply(fe, fields.kv, fields.kh, fields.w, fields.px,
                           fields.py);
}

Tensor iaef_filter(const Tensor& fe, const Tensor& fl, const IaefParams& p) {
    return apply_iaef(fe, extract_filter_fields(fl, fe, p));
}

} // namespace evlie

#include "evlie/eici.hpp"

#include <atomic>
#include <cmath>
#include <string>

#include "evlie/errors.hpp"
#include "evlie/ops.hpp"

namespace evlie {

namespace {

std::atomic<int64_t> g_attention_count{0};

void check_tokens(const Tensor& t, const char* name) {
    if (!t) throw ArgumentError(std::string(name) + ": null tensor");
    if (t->shape.size() != 2) {
        throw ArgumentError(std::string(name) +
                            ": token matrices are 2-D (N x C)");
    }
}

void check_square(const Tensor& t, int64_t c, const char* name) {
    if (!t || t->shape != std::vector<int64_t>{c, c}) {
        throw ArgumentError(std::string(name) + ": expected a " +
                            std::to_string(c) + "x" + std::to_string(c) +
                            " projection");
    }
}

void check_row_stochastic(const Tensor& a) {
    const int64_t c = a->shape[0];
    for (int64_t i = 0; i < c; ++i) {
        double sum = 0.0;
        for (int64_t j = 0; j < c; ++j) sum += a->value[i * c + j];
        if (std::fabs(sum - 1.0) > 1e-6) {
            throw NumericError("attention row " + std::to_string(i) +
                               " sums to " + std::to_string(sum));
        }
    }
}

// Covariance attention without the residual: queries from t, keys and
// values from x. The returned pair is ((V·A^T)·W_O, A).
std::pair<Tensor, Tensor> attn_core(const Tensor& x, const Tensor& t,
                                    const GatherParams& p) {
    check_tokens(x, "attention X");
    check_tokens(t, "attention T");
    if (x->shape != t->shape) {
        throw ArgumentError("attention: X and T must share N x C, got (" +
                            std::to_string(x->shape[0]) + "," +
                            std::to_string(x->shape[1]) + ") vs (" +
                            std::to_string(t->shape[0]) + "," +
                            std::to_string(t->shape[1]) + ")");
    }
    const int64_t c = x->shape[1];
    check_square(p.wq, c, "W_Q");
    check_square(p.wk, c, "W_K");
    check_square(p.wv, c, "W_V");
    check_square(p.wo, c, "W_O");
    if (!p.log_tau || p.log_tau->numel() != 1) {
        throw ArgumentError("attention: log_tau must be a scalar");
    }

    Tensor q = ops::l2_normalize(ops::matmul(t, p.wq), 0);
    Tensor k = ops::l2_normalize(ops::matmul(x, p.wk), 0);
    Tensor v = ops::matmul(x, p.wv);
    Tensor tau = ops::exp(p.log_tau);
    Tensor logits = ops::mul(ops::matmul(ops::transpose(q), k), tau);
    Tensor a = ops::softmax(logits, 1);
    ++g_attention_count;
    check_row_stochastic(a);
    Tensor core = ops::matmul(ops::matmul(v, ops::transpose(a)), p.wo);
    return {core, a};
}

} // namespace

Tensor tokens_from_map(const Tensor& map) {
    if (!map || map->shape.size() != 3) {
        throw ArgumentError("tokens_from_map: feature maps are C x H x W");
    }
    const int64_t c = map->shape[0];
    const int64_t n = map->shape[1] * map->shape[2];
    return ops::transpose(ops::reshape(map, {c, n}));
}

Tensor map_from_tokens(const Tensor& tokens, int64_t h, int64_t w) {
    check_tokens(tokens, "map_from_tokens");
    if (tokens->shape[0] != h * w) {
        throw ArgumentError("map_from_tokens: " +
                            std::to_string(tokens->shape[0]) +
                            " tokens do not tile " + std::to_string(h) + "x" +
                            std::to_string(w));
    }
    return ops::reshape(ops::transpose(tokens), {tokens->shape[1], h, w});
}

std::pair<Tensor, Tensor> forward_gather(const Tensor& x, const Tensor& t,
                                         const GatherParams& p) {
    auto [core, a] = attn_core(x, t, p);
    return {ops::add(core, t), a};
}

Tensor backward_inject(const Tensor& tp, const Tensor& a, const Tensor& x,
                       const InjectParams& p) {
    check_tokens(tp, "backward_inject Tp");
    check_tokens(x, "backward_inject X");
    if (tp->shape != x->shape) {
        throw ArgumentError("backward_inject: Tp and X must share N x C");
    }
    const int64_t c = x->shape[1];
    if (!a || a->shape != std::vector<int64_t>{c, c}) {
        throw ArgumentError("backward_inject: A must be C x C");
    }
    check_square(p.wv, c, "W_V'");
    check_square(p.wo, c, "W_O'");
    return ops::add(ops::matmul(ops::matmul(ops::matmul(tp, p.wv), a), p.wo),
                    x);
}

Tensor latent_fuse(const Tensor& f, const LatentParams& p) {
    check_tokens(f, "latent_fuse");
    const int64_t c = f->shape[1];
    auto [core, a] = attn_core(f, f, p.attn);
    (void)a;
    Tensor y1 = ops::layer_norm(ops::add(f, core), p.ln1_g, p.ln1_b);
    if (!p.ffn_w1 || p.ffn_w1->shape != std::vector<int64_t>{c, 2 * c} ||
        !p.ffn_w2 || p.ffn_w2->shape != std::vector<int64_t>{2 * c, c}) {
        throw ArgumentError("latent_fuse: feed-forward must be C x 2C x C");
    }
    Tensor h = ops::relu(ops::add(ops::matmul(y1, p.ffn_w1), p.ffn_b1));
    Tensor ffn = ops::add(ops::matmul(h, p.ffn_w2), p.ffn_b2);
    return ops::layer_norm(ops::add(y1, ffn), p.ln2_g, p.ln2_b);
}

EiciOut eici_block(const Tensor& fi, const Tensor& fl, const Tensor& fe,
                   const EiciParams& p, GuidanceMode guidance,
                   InjectMode injection) {
    check_tokens(fi, "eici_block F_i");
    check_tokens(fl, "eici_block F_l");
    check_tokens(fe, "eici_block F_e");
    if (fi->shape != fl->shape || fi->shape != fe->shape) {
        throw ArgumentError("eici_block: F_i, F_l, F_e must share N x C");
    }
    const bool use_e = guidance == GuidanceMode::kEventOnly ||
                       guidance == GuidanceMode::kBoth;
    const bool use_l = guidance == GuidanceMode::kIllumOnly ||
                       guidance == GuidanceMode::kBoth;

    Tensor sum = fi;
    Tensor a_e, a_l;
    if (use_e) {
        auto [fi_e, a] = forward_gather(fe, fi, p.gather_e);
        sum = ops::add(sum, fi_e);
        a_e = a;
    }
    if (use_l) {
        auto [fi_l, a] = forward_gather(fl, fi, p.gather_l);
        sum = ops::add(sum, fi_l);
        a_l = a;
    }
    Tensor fhat_i = latent_fuse(sum, p.latent);

    auto inject_side = [&](const Tensor& side, const Tensor& a,
                           const InjectParams& ip, const Tensor& gate,
                           const GatherParams& xp) -> Tensor {
        switch (injection) {
            case InjectMode::kNone:
                return side;
            case InjectMode::kGating:
                if (!gate) {
                    throw ArgumentError("eici_block: gating needs gate params");
                }
                return ops::add(side, ops::mul(fhat_i, ops::sigmoid(gate)));
            case InjectMode::kCrossAttn:
                return forward_gather(fhat_i, side, xp).first;
            case InjectMode::kReuse:
            default:
                return backward_inject(fhat_i, a, side, ip);
        }
    };

    EiciOut out;
    out.fi = fhat_i;
    out.fl = use_l ? inject_side(fl, a_l, p.inject_l, p.gate_l, p.xattn_l)
                   : fl;
    out.fe = use_e ? inject_side(fe, a_e, p.inject_e, p.gate_e, p.xattn_e)
                   : fe;
    return out;
}

int64_t attention_matrix_count() { return g_attention_count.load(); }

void reset_attention_matrix_count() { g_attention_count.store(0); }

} // namespace evlie

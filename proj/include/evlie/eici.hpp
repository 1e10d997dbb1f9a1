#pragma once

#include <cstdint>
#include <utility>

#include "evlie/tensor.hpp"

namespace evlie {

// Channel cross-attention parameters: square projections over the
// channel axis, no biases, temperature stored as its logarithm so it
// stays positive under gradient descent.
struct GatherParams {
    Tensor wq, wk, wv, wo; // C x C
    Tensor log_tau;        // scalar
};

struct InjectParams {
    Tensor wv, wo; // C x C
};

// One post-norm transformer block over tokens: covariance
// self-attention + residual, layer norm, 2-layer feed-forward
// (C -> 2C -> C) + residual, layer norm.
struct LatentParams {
    GatherParams attn;
    Tensor ln1_g, ln1_b; // C
    Tensor ln2_g, ln2_b; // C
    Tensor ffn_w1, ffn_b1; // C x 2C, 2C
    Tensor ffn_w2, ffn_b2; // 2C x C, C
};

// Which modalities feed the interaction, and how fused features are
// pushed back into them.
enum class GuidanceMode { kNone, kEventOnly, kIllumOnly, kBoth };
enum class InjectMode { kNone, kGating, kCrossAttn, kReuse };

struct EiciParams {
    GatherParams gather_e, gather_l;
    LatentParams latent;
    InjectParams inject_e, inject_l; // reuse mode
    Tensor gate_e, gate_l;           // gating mode, C
    GatherParams xattn_e, xattn_l;   // cross-attention mode
};

// C x H x W feature map <-> N x C token matrix, token index y*W + x.
Tensor tokens_from_map(const Tensor& map);
Tensor map_from_tokens(const Tensor& tokens, int64_t h, int64_t w);

// Gathers context from X into T over the channel axis:
// Q = T·W_Q, K = X·W_K, V = X·W_V with columns l2-normalized across
// tokens for Q and K; A = row-softmax(Q^T·K · tau) in C x C;
// T' = (V·A^T)·W_O + T. Returns (T', A) so A can be reused.
std::pair<Tensor, Tensor> forward_gather(const Tensor& x, const Tensor& t,
                                         const GatherParams& p);

// Redistributes fused tokens back into the source modality with the
// stored attention matrix: X' = ((Tp·W_V')·A)·W_O' + X.
Tensor backward_inject(const Tensor& tp, const Tensor& a, const Tensor& x,
                       const InjectParams& p);

Tensor latent_fuse(const Tensor& f, const LatentParams& p);

struct EiciOut {
    Tensor fi, fl, fe;
};

// Full interaction block: gather the enabled modalities into the image
// feature, fuse in the latent space, then push the fused feature back
// into each enabled modality by the selected injection mode.
EiciOut eici_block(const Tensor& fi, const Tensor& fl, const Tensor& fe,
                   const EiciParams& p,
                   GuidanceMode guidance = GuidanceMode::kBoth,
                   InjectMode injection = InjectMode::kReuse);

// Number of attention matrices computed since the last reset; lets
// tests confirm that injection reuses stored attention instead of
// recomputing it.
int64_t attention_matrix_count();
void reset_attention_matrix_count();

} // namespace evlie

#pragma once

#include <cstdint>

#include "ctxsr/autograd.hpp"

// Differentiable tensor operations. Layout conventions: feature maps are
// (B, C, H, W); token arrays are (B, N, C); head-split arrays are
// (B, heads, N, d_k).
namespace ctxsr::ad {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);

Var sum(const Var& a);
// Σ w ⊙ a with a constant weight tensor.
Var weighted_sum(const Var& a, const Tensor& w);
// mean((a - b)^2)
Var mean_squared_error(const Var& a, const Var& b);
// mean(|a - b|); subgradient 0 at ties.
Var mean_abs_error(const Var& a, const Var& b);

// y = x Wᵀ + b over the last axis of x. W is (out, in); b is (out) or undefined.
Var linear(const Var& x, const Var& w, const Var& b);
// Zero-padded 2-D cross-correlation; w is (C_out, C_in, k, k).
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);

Var silu(const Var& x);
Var gelu(const Var& x);  // tanh approximation
Var sigmoid(const Var& x);
Var clamp(const Var& x, double lo, double hi);

// Normalizes over the last axis, then applies per-channel gain and bias.
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

Var nchw_to_tokens(const Var& x);
Var tokens_to_nchw(const Var& x, int64_t height, int64_t width);
// (B, H·W, C) → (B·nw, win², C) with non-overlapping win×win windows.
Var window_partition(const Var& x, int64_t height, int64_t width, int64_t win);
Var window_merge(const Var& x, int64_t batch, int64_t height, int64_t width, int64_t win);
Var split_heads(const Var& x, int64_t heads);
Var merge_heads(const Var& x);
// Slice [begin, begin + count) of the last axis.
Var slice_last(const Var& x, int64_t begin, int64_t count);

// Divides each (b, head) slab of a (B, heads, N, d_k) array by
// max(max|slab|, eps).
Var max_normalize(const Var& x, double eps);
// softmax(q kᵀ / √d_k) v per (b, head); inputs (B, heads, N, d_k).
Var attention(const Var& q, const Var& k, const Var& v);
// The row-stochastic weight matrices of attention(): (B, heads, N, N).
Tensor attention_weights(const Tensor& q, const Tensor& k);

Var upsample_nearest(const Var& x, int factor);
Var concat_channels(const Var& a, const Var& b);
// x ⊙ (1 + scale) + shift with per-(b, c) scale/shift of shape (B, C).
Var film(const Var& x, const Var& scale, const Var& shift);
// x + bias with bias of shape (B, C), broadcast over H, W.
Var add_channel_bias(const Var& x, const Var& bias);
// (B, N, D) → (B, D)
Var mean_tokens(const Var& x);

}  // namespace ctxsr::ad

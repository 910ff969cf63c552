#pragma once

#include <string>

#include "ctxsr/nn.hpp"

// Local-global context-aware attention block.
//
//   S' = tokens(S); Ŝ = LN1(S')
//   Q, K, V = Proj_in(Ŝ), split into heads
//   Q ← Q / max(|Q|, ε),  K ← K / max(|K|, ε)      (per-head max over tokens and channels)
//   Ŝ_L = LN2(Proj_out(softmax(Q Kᵀ / √d_k) V))
//   S_G = clamp(GA(Ŝ_L), lo, hi)
//   Y   = MLP(LN3(S_G)) reshaped to (B, C, H, W)
//
// GA projects tokens into a global embedding space, normalizes, runs
// multi-head softmax attention over the full sequence and projects back.
// The block carries no residual; the host network adds one.
namespace ctxsr::lgcaa {

using ad::Var;

enum class LocalMode { FullSequence, Windowed };

// Ablation variants of the block.
enum class Variant {
    Plain,        // softmax attention without max-normalization or GA
    LocalOnly,    // max-normalized local attention, no GA
    GlobalOnly,   // GA on LN1 tokens, no local attention
    NoFinalNorm,  // local + global without LN3
    Full,
};

std::string to_string(LocalMode m);
std::string to_string(Variant v);
LocalMode local_mode_from_string(const std::string& s);
Variant variant_from_string(const std::string& s);

struct AttentionConfig {
    int num_heads = 1;
    double eps = 1e-6;
    double clamp_lo = -1.0;
    double clamp_hi = 1.0;
    LocalMode local_mode = LocalMode::FullSequence;
    int window = 4;
    int global_embed_dim = 0;  // 0: same as block channels
    Variant variant = Variant::Full;

    int64_t embed_dim(int64_t channels) const { return global_embed_dim > 0 ? global_embed_dim : channels; }
    // Throws ValidationError / DimensionError for an inconsistent setup.
    void validate(int64_t channels, int64_t height, int64_t width) const;
};

struct AttentionParams {
    nn::LayerNorm ln1, ln2, ln3;
    nn::Linear proj_in;  // C → 3C (Q, K, V)
    nn::Linear proj_out;
    nn::Linear ga_proj_in;  // C → E
    nn::LayerNorm ga_norm;
    nn::Linear ga_qkv;  // E → 3E
    nn::Linear ga_out;
    nn::Linear ga_proj_back;  // E → C
    nn::Linear mlp_fc1;       // C → 4C
    nn::Linear mlp_fc2;       // 4C → C

    // Random projections, unit norms. `zero_last` zeroes mlp_fc2 so the
    // block starts as the zero map inside a residual.
    static AttentionParams init(int64_t channels, const AttentionConfig& cfg, Rng& rng, bool zero_last = false);
    void visit(const std::string& prefix, const nn::Visitor& f);
    int64_t channels() const { return proj_out.weight.dim(0); }
};

// softmax(q̂ k̂ᵀ / √d_k) v with q̂, k̂ max-normalized; inputs (B, heads, N, d_k).
Var local_attention(const Var& q, const Var& k, const Var& v, double eps);

// (B, N, C) → (B, N, C), clamped to [clamp_lo, clamp_hi].
Var global_attention(const Var& tokens, const AttentionParams& p, const AttentionConfig& cfg);

// (B, C, H, W) → (B, C, H, W). Throws NumericError naming the stage that
// produced a non-finite value.
Var lgcaa_forward(const Var& s, const AttentionParams& p, const AttentionConfig& cfg);

}  // namespace ctxsr::lgcaa

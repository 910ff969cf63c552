#include "ctxsr/lgcaa.hpp"

#include "ctxsr/error.hpp"

namespace ctxsr::lgcaa {

using namespace ctxsr::ad;

std::string to_string(LocalMode m) { return m == LocalMode::Windowed ? "windowed" : "full_sequence"; }

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Plain: return "plain";
        case Variant::LocalOnly: return "local";
        case Variant::GlobalOnly: return "global";
        case Variant::NoFinalNorm: return "local_global_no_norm";
        case Variant::Full: return "lgcaa";
    }
    return "lgcaa";
}

LocalMode local_mode_from_string(const std::string& s) {
    if (s == "full_sequence") return LocalMode::FullSequence;
    if (s == "windowed") return LocalMode::Windowed;
    throw ValidationError("unknown local_mode '" + s + "' (expected full_sequence or windowed)");
}

Variant variant_from_string(const std::string& s) {
    for (auto v : {Variant::Plain, Variant::LocalOnly, Variant::GlobalOnly, Variant::NoFinalNorm, Variant::Full})
        if (to_string(v) == s) return v;
    throw ValidationError("unknown attention variant '" + s +
                          "' (expected plain, local, global, local_global_no_norm or lgcaa)");
}

void AttentionConfig::validate(int64_t channels, int64_t height, int64_t width) const {
    if (num_heads < 1) throw ValidationError("num_heads must be >= 1");
    if (!(eps > 0)) throw ValidationError("eps must be > 0");
    if (!(clamp_lo < clamp_hi)) throw ValidationError("clamp_lo must be < clamp_hi");
    if (channels % num_heads)
        throw DimensionError("channels " + std::to_string(channels) + " not divisible by num_heads " +
                             std::to_string(num_heads));
    if (embed_dim(channels) % num_heads)
        throw DimensionError("global_embed_dim " + std::to_string(embed_dim(channels)) +
                             " not divisible by num_heads " + std::to_string(num_heads));
    if (height * width < 1) throw DimensionError("feature map must hold at least one token");
    if (local_mode == LocalMode::Windowed && (window < 1 || height % window || width % window))
        throw DimensionError("window " + std::to_string(window) + " does not divide " + std::to_string(height) + "x" +
                             std::to_string(width));
}

AttentionParams AttentionParams::init(int64_t channels, const AttentionConfig& cfg, Rng& rng, bool zero_last) {
    const int64_t C = channels, E = cfg.embed_dim(channels);
    AttentionParams p;
    p.ln1 = nn::LayerNorm::init(C);
    p.ln2 = nn::LayerNorm::init(C);
    p.ln3 = nn::LayerNorm::init(C);
    p.proj_in = nn::Linear::init(C, 3 * C, rng);
    p.proj_out = nn::Linear::init(C, C, rng);
    p.ga_proj_in = nn::Linear::init(C, E, rng);
    p.ga_norm = nn::LayerNorm::init(E);
    p.ga_qkv = nn::Linear::init(E, 3 * E, rng);
    p.ga_out = nn::Linear::init(E, E, rng);
    p.ga_proj_back = nn::Linear::init(E, C, rng);
    p.mlp_fc1 = nn::Linear::init(C, 4 * C, rng);
    p.mlp_fc2 = zero_last ? nn::Linear::zeros(4 * C, C) : nn::Linear::init(4 * C, C, rng);
    return p;
}

void AttentionParams::visit(const std::string& prefix, const nn::Visitor& f) {
    ln1.visit(prefix + ".ln1", f);
    proj_in.visit(prefix + ".proj_in", f);
    proj_out.visit(prefix + ".proj_out", f);
    ln2.visit(prefix + ".ln2", f);
    ga_proj_in.visit(prefix + ".ga_proj_in", f);
    ga_norm.visit(prefix + ".ga_norm", f);
    ga_qkv.visit(prefix + ".ga_qkv", f);
    ga_out.visit(prefix + ".ga_out", f);
    ga_proj_back.visit(prefix + ".ga_proj_back", f);
    ln3.visit(prefix + ".ln3", f);
    mlp_fc1.visit(prefix + ".mlp_fc1", f);
    mlp_fc2.visit(prefix + ".mlp_fc2", f);
}

Var local_attention(const Var& q, const Var& k, const Var& v, double eps) {
    return attention(max_normalize(q, eps), max_normalize(k, eps), v);
}

namespace {

// Multi-head softmax attention over a packed (B, N, 3C) projection.
Var packed_attention(const Var& qkv, int64_t channels, int heads, bool max_norm, double eps) {
    Var q = split_heads(slice_last(qkv, 0, channels), heads);
    Var k = split_heads(slice_last(qkv, channels, channels), heads);
    Var v = split_heads(slice_last(qkv, 2 * channels, channels), heads);
    return merge_heads(max_norm ? local_attention(q, k, v, eps) : attention(q, k, v));
}

}  // namespace

Var global_attention(const Var& tokens, const AttentionParams& p, const AttentionConfig& cfg) {
    require_rank(tokens.value(), 3, "global_attention");
    const int64_t E = p.ga_proj_in.weight.dim(0);
    Var e = p.ga_norm(p.ga_proj_in(tokens));
    Var a = packed_attention(p.ga_qkv(e), E, cfg.num_heads, false, cfg.eps);
    return clamp(p.ga_proj_back(p.ga_out(a)), cfg.clamp_lo, cfg.clamp_hi);
}

Var lgcaa_forward(const Var& s, const AttentionParams& p, const AttentionConfig& cfg) {
    require_rank(s.value(), 4, "lgcaa_forward");
    const int64_t B = s.dim(0), C = s.dim(1), H = s.dim(2), W = s.dim(3);
    if (p.channels() != C)
        throw DimensionError("lgcaa_forward: params built for " + std::to_string(p.channels()) + " channels, input has " +
                             std::to_string(C));
    cfg.validate(C, H, W);

    Var x = p.ln1(nchw_to_tokens(s));
    nn::require_finite(x, "lgcaa.ln1");

    const bool has_local = cfg.variant != Variant::GlobalOnly;
    const bool has_global = cfg.variant != Variant::Plain && cfg.variant != Variant::LocalOnly;

    Var h = x;
    if (has_local) {
        Var qkv = p.proj_in(x);
        const bool windowed = cfg.local_mode == LocalMode::Windowed;
        if (windowed) qkv = window_partition(qkv, H, W, cfg.window);
        Var a = packed_attention(qkv, C, cfg.num_heads, cfg.variant != Variant::Plain, cfg.eps);
        if (windowed) a = window_merge(a, B, H, W, cfg.window);
        nn::require_finite(a, "lgcaa.local_attention");
        h = p.ln2(p.proj_out(a));
        nn::require_finite(h, "lgcaa.ln2");
    }
    if (has_global) {
        h = global_attention(h, p, cfg);
        nn::require_finite(h, "lgcaa.global_attention");
        if (cfg.variant != Variant::NoFinalNorm) h = p.ln3(h);
        nn::require_finite(h, "lgcaa.ln3");
    }
    Var y = p.mlp_fc2(gelu(p.mlp_fc1(h)));
    nn::require_finite(y, "lgcaa.mlp");
    return tokens_to_nchw(y, H, W);
}

}  // namespace ctxsr::lgcaa

#include "ctxsr/diffusion.hpp"

#include <cmath>

#include "ctxsr/error.hpp"

namespace ctxsr::diffusion {

Schedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw ValidationError("schedule: T must be >= 1");
    if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1))
        throw ValidationError("schedule: need 0 < beta_start <= beta_end < 1");
    Schedule s;
    s.T = T;
    double prod = 1.0;
    for (int i = 0; i < T; ++i) {
        const double b = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (T - 1);
        s.betas.push_back(b);
        s.alphas.push_back(1.0 - b);
        prod *= 1.0 - b;
        s.alpha_bars.push_back(prod);
    }
    return s;
}

Tensor forward_noise(const Tensor& z0, int t, const Tensor& eps, const Schedule& s) {
    const int64_t B = z0.rank() > 0 ? z0.dim(0) : 0;
    return forward_noise(z0, std::vector<int>(static_cast<size_t>(B), t), eps, s);
}

Tensor forward_noise(const Tensor& z0, const std::vector<int>& t, const Tensor& eps, const Schedule& s) {
    require_same_shape(z0, eps, "forward_noise");
    if (z0.rank() < 1 || static_cast<int64_t>(t.size()) != z0.dim(0))
        throw DimensionError("forward_noise: need one timestep per batch item");
    Tensor out(z0.shape());
    const int64_t per = z0.numel() / z0.dim(0);
    for (size_t b = 0; b < t.size(); ++b) {
        if (t[b] < 1 || t[b] > s.T)
            throw ValidationError("forward_noise: t=" + std::to_string(t[b]) + " outside [1, " + std::to_string(s.T) + "]");
        const double ab = s.alpha_bar(t[b]), a = std::sqrt(ab), c = std::sqrt(1.0 - ab);
        for (int64_t i = static_cast<int64_t>(b) * per; i < static_cast<int64_t>(b + 1) * per; ++i)
            out[i] = a * z0[i] + c * eps[i];
    }
    return out;
}

std::vector<int> strided_timesteps(int T, int steps) {
    if (steps < 1 || steps > T) throw ValidationError("sampling steps must lie in [1, T]");
    std::vector<int> ts;
    for (int k = 1; k <= steps; ++k) ts.push_back(static_cast<int>(static_cast<int64_t>(k) * T / steps));
    return ts;
}

Tensor timestep_table(const std::vector<int>& t, int dim) {
    const int half = dim / 2;
    Tensor out({static_cast<int64_t>(t.size()), dim});
    for (size_t b = 0; b < t.size(); ++b)
        for (int i = 0; i < half; ++i) {
            const double f = std::exp(-std::log(10000.0) * i / half);
            out[static_cast<int64_t>(b) * dim + i] = std::sin(t[b] * f);
            out[static_cast<int64_t>(b) * dim + half + i] = std::cos(t[b] * f);
        }
    return out;
}

ResBlock ResBlock::init(int64_t channels, int time_dim, Rng& rng) {
    return {nn::Conv::init(channels, channels, 3, 1, rng), nn::Conv::init(channels, channels, 3, 1, rng, 0.5),
            nn::Linear::init(time_dim, channels, rng)};
}

Var ResBlock::operator()(const Var& h, const Var& t_emb) const {
    Var y = ad::add_channel_bias(c1(ad::silu(h)), temb(t_emb));
    return ad::add(h, c2(ad::silu(y)));
}

void ResBlock::visit(const std::string& prefix, const nn::Visitor& f) {
    c1.visit(prefix + ".c1", f);
    c2.visit(prefix + ".c2", f);
    temb.visit(prefix + ".temb", f);
}

Level Level::init(int64_t channels, const DenoiserConfig& cfg, Rng& rng) {
    Level l;
    l.res = ResBlock::init(channels, cfg.time_dim, rng);
    l.film = nn::Linear::zeros(cfg.feature_dim, 2 * channels);
    l.attn = lgcaa::AttentionParams::init(channels, cfg.attention, rng, true);
    return l;
}

void Level::visit(const std::string& prefix, const nn::Visitor& f) {
    res.visit(prefix + ".res", f);
    film.visit(prefix + ".film", f);
    attn.visit(prefix + ".attn", f);
}

namespace {

// Fresh leaf nodes holding the same values.
template <class T>
T deep_copy(const T& src) {
    T out = src;
    out.visit("", [](const std::string&, Var& v) { v = nn::parameter(v.value()); });
    return out;
}

}  // namespace

DenoiserParams DenoiserParams::init(const DenoiserConfig& cfg, uint64_t seed) {
    if (cfg.latent_channels < 1 || cfg.width < 1 || cfg.time_dim < 2 || cfg.time_dim % 2 || cfg.feature_dim < 1)
        throw ValidationError("denoiser: sizes must be positive and time_dim even");
    Rng rng(mix_seed(seed, 0xde0));
    const int64_t W = cfg.width, L = cfg.latent_channels;
    DenoiserParams p;
    p.config = cfg;
    p.time_mlp = nn::Linear::init(cfg.time_dim, cfg.time_dim, rng);
    p.conv_in = nn::Conv::init(L, W, 3, 1, rng);
    p.down0 = Level::init(W, cfg, rng);
    p.down_conv = nn::Conv::init(W, 2 * W, 3, 2, rng);
    p.down1 = Level::init(2 * W, cfg, rng);
    p.mid = Level::init(2 * W, cfg, rng);
    p.up1_merge = nn::Conv::init(4 * W, 2 * W, 3, 1, rng);
    p.up1 = Level::init(2 * W, cfg, rng);
    p.up0_conv = nn::Conv::init(2 * W, W, 3, 1, rng);
    p.up0_merge = nn::Conv::init(2 * W, W, 3, 1, rng);
    p.up0 = Level::init(W, cfg, rng);
    p.conv_out = nn::Conv::init(W, L, 3, 1, rng);

    p.ctrl.hint = cond::make_zero_conv(L, L);
    p.ctrl.conv_in = deep_copy(p.conv_in);
    p.ctrl.down0 = deep_copy(p.down0);
    p.ctrl.down_conv = deep_copy(p.down_conv);
    p.ctrl.down1 = deep_copy(p.down1);
    p.ctrl.link0 = cond::make_zero_conv(W, W);
    p.ctrl.link1 = cond::make_zero_conv(2 * W, 2 * W);

    Rng cond_rng(mix_seed(seed, 0xc0d));
    p.embed = cond::EmbedderParams::init({cfg.scale_factor, cfg.patch_size, cfg.embed_hidden, cfg.latent_channels}, cond_rng);
    p.to_rgb = cond::ToRgbParams::init(L, cfg.patch_size, cond_rng);
    // Parameters live on the float32 grid so checkpoints round-trip exactly.
    p.visit([](const std::string&, Var& v) {
        for (double& x : v.mutable_value().values()) x = static_cast<double>(static_cast<float>(x));
    });
    return p;
}

void DenoiserParams::visit(const nn::Visitor& f) {
    time_mlp.visit("time_mlp", f);
    conv_in.visit("conv_in", f);
    down0.visit("down0", f);
    down_conv.visit("down_conv", f);
    down1.visit("down1", f);
    mid.visit("mid", f);
    up1_merge.visit("up1_merge", f);
    up1.visit("up1", f);
    up0_conv.visit("up0_conv", f);
    up0_merge.visit("up0_merge", f);
    up0.visit("up0", f);
    conv_out.visit("conv_out", f);
    ctrl.hint.visit("ctrl.hint", f);
    ctrl.conv_in.visit("ctrl.conv_in", f);
    ctrl.down0.visit("ctrl.down0", f);
    ctrl.down_conv.visit("ctrl.down_conv", f);
    ctrl.down1.visit("ctrl.down1", f);
    ctrl.link0.visit("ctrl.link0", f);
    ctrl.link1.visit("ctrl.link1", f);
    embed.visit("cond.embed", f);
    to_rgb.visit("cond.to_rgb", f);
}

bool trainable_when_frozen(const std::string& name) {
    return name.find(".attn.") != std::string::npos || name.find(".film.") != std::string::npos ||
           name.rfind("ctrl.", 0) == 0 || name.rfind("cond.", 0) == 0;
}

void apply_freeze(DenoiserParams& p, bool freeze_non_attention) {
    p.visit([&](const std::string& name, Var& v) {
        v.set_requires_grad(!freeze_non_attention || trainable_when_frozen(name));
    });
}

namespace {

Var run_level(const Level& l, const Var& h, const Var& t_emb, const Var& pooled, const lgcaa::AttentionConfig& cfg,
              const char* name) {
    const int64_t C = h.dim(1);
    Var x = l.res(h, t_emb);
    Var mod = l.film(pooled);
    x = ad::film(x, ad::slice_last(mod, 0, C), ad::slice_last(mod, C, C));
    x = ad::add(x, lgcaa::lgcaa_forward(x, l.attn, cfg));
    nn::require_finite(x, std::string("denoiser.") + name);
    return x;
}

}  // namespace

Var denoiser_forward(const Var& z_t, const std::vector<int>& t, const Tensor& c_d, const Var& c_f,
                     const DenoiserParams& p, bool with_control) {
    const auto& cfg = p.config;
    require_rank(z_t.value(), 4, "denoiser_forward");
    const int64_t B = z_t.dim(0), H = z_t.dim(2), W = z_t.dim(3);
    if (z_t.dim(1) != cfg.latent_channels)
        throw DimensionError("denoiser_forward: expected " + std::to_string(cfg.latent_channels) +
                             " latent channels, got " + shape_str(z_t.shape()));
    if (H % 2 || W % 2) throw DimensionError("denoiser_forward: latent size must be even, got " + shape_str(z_t.shape()));
    if (static_cast<int64_t>(t.size()) != B) throw DimensionError("denoiser_forward: need one timestep per batch item");
    if (c_d.rank() != 3 || c_d.dim(0) != B || c_d.dim(2) != cfg.feature_dim)
        throw DimensionError("denoiser_forward: c_d " + shape_str(c_d.shape()) + " does not match batch " +
                             std::to_string(B) + " and feature_dim " + std::to_string(cfg.feature_dim));
    if (with_control) require_same_shape(z_t.value(), c_f.value(), "denoiser_forward c_f");

    Var t_emb = ad::silu(p.time_mlp(Var(timestep_table(t, cfg.time_dim))));
    Var pooled = ad::mean_tokens(Var(c_d));
    const auto& acfg = cfg.attention;

    Var h = run_level(p.down0, p.conv_in(z_t), t_emb, pooled, acfg, "down0");
    Var skip0 = h;
    Var c0, c1;
    if (with_control) {
        Var u = ad::add(z_t, cond::zero_conv(c_f, p.ctrl.hint));
        Var g = run_level(p.ctrl.down0, p.ctrl.conv_in(u), t_emb, pooled, acfg, "ctrl.down0");
        c0 = cond::zero_conv(g, p.ctrl.link0);
        g = run_level(p.ctrl.down1, p.ctrl.down_conv(g), t_emb, pooled, acfg, "ctrl.down1");
        c1 = cond::zero_conv(g, p.ctrl.link1);
        skip0 = ad::add(skip0, c0);
    }
    h = run_level(p.down1, p.down_conv(h), t_emb, pooled, acfg, "down1");
    Var skip1 = with_control ? ad::add(h, c1) : h;
    h = run_level(p.mid, h, t_emb, pooled, acfg, "mid");
    h = run_level(p.up1, p.up1_merge(ad::concat_channels(h, skip1)), t_emb, pooled, acfg, "up1");
    h = p.up0_merge(ad::concat_channels(p.up0_conv(ad::upsample_nearest(h, 2)), skip0));
    h = run_level(p.up0, h, t_emb, pooled, acfg, "up0");
    Var out = p.conv_out(ad::silu(h));
    nn::require_finite(out, "denoiser.out");
    return out;
}

}  // namespace ctxsr::diffusion

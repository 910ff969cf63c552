#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctxsr/conditioning.hpp"
#include "ctxsr/lgcaa.hpp"

namespace ctxsr::diffusion {

using ad::Var;

// Linear DDPM schedule. Index t runs 1..T; alpha_bar(0) is 1.
struct Schedule {
    int T = 0;
    std::vector<double> betas, alphas, alpha_bars;  // length T, element t-1 holds step t

    double beta(int t) const { return betas.at(static_cast<size_t>(t - 1)); }
    double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars.at(static_cast<size_t>(t - 1)); }
};

Schedule make_schedule(int T, double beta_start, double beta_end);

// z_t = √ᾱ_t z_0 + √(1 − ᾱ_t) ε
Tensor forward_noise(const Tensor& z0, int t, const Tensor& eps, const Schedule& s);
// Per-item timesteps: t[b] applies to batch item b.
Tensor forward_noise(const Tensor& z0, const std::vector<int>& t, const Tensor& eps, const Schedule& s);

// Evenly strided subset t_k = floor(k·T/steps), k = 1..steps, ascending.
std::vector<int> strided_timesteps(int T, int steps);

// Sinusoidal embedding rows (B, dim) for integer timesteps.
Tensor timestep_table(const std::vector<int>& t, int dim);

struct DenoiserConfig {
    int latent_channels = 12;
    int width = 32;
    int time_dim = 32;
    int feature_dim = 64;  // c_d token width
    int scale_factor = 4;
    int patch_size = 2;
    int embed_hidden = 16;
    lgcaa::AttentionConfig attention;
};

// Conv residual block with a timestep bias between its two convolutions.
struct ResBlock {
    nn::Conv c1, c2;
    nn::Linear temb;

    static ResBlock init(int64_t channels, int time_dim, Rng& rng);
    Var operator()(const Var& h, const Var& t_emb) const;
    void visit(const std::string& prefix, const nn::Visitor& f);
};

// One resolution level: residual conv block, c_d modulation, LGCAA.
struct Level {
    ResBlock res;
    nn::Linear film;  // pooled c_d → (scale, shift); zero at init
    lgcaa::AttentionParams attn;

    static Level init(int64_t channels, const DenoiserConfig& cfg, Rng& rng);
    void visit(const std::string& prefix, const nn::Visitor& f);
};

struct DenoiserParams {
    DenoiserConfig config;
    nn::Linear time_mlp;
    nn::Conv conv_in;
    Level down0;
    nn::Conv down_conv;  // stride 2, W → 2W
    Level down1;
    Level mid;
    nn::Conv up1_merge;  // [mid, skip1] 4W → 2W
    Level up1;
    nn::Conv up0_conv;   // after ×2 upsample, 2W → W
    nn::Conv up0_merge;  // [up, skip0] 2W → W
    Level up0;
    nn::Conv conv_out;

    // Control branch: a copy of the down path fed z_t + hint(c_f).
    struct Control {
        nn::Conv hint;  // zero 1×1 on c_f
        nn::Conv conv_in;
        Level down0;
        nn::Conv down_conv;
        Level down1;
        nn::Conv link0, link1;  // zero 1×1 into the skips
    } ctrl;

    cond::EmbedderParams embed;
    cond::ToRgbParams to_rgb;

    static DenoiserParams init(const DenoiserConfig& cfg, uint64_t seed);
    void visit(const nn::Visitor& f);
};

// Trainable parameter under freeze_non_attention: attention and modulation
// layers of every level, the control branch and the conditioning embedder.
bool trainable_when_frozen(const std::string& name);

// Sets requires_grad on every parameter according to the freeze policy.
void apply_freeze(DenoiserParams& p, bool freeze_non_attention);

// ε̂ = ε_θ(z_t, t, c_d, c_f). c_d is (B, N, feature_dim) frozen tokens,
// c_f the (B, latent_channels, h, w) condition embedding. Throws
// NumericError naming the level that produced a non-finite value.
Var denoiser_forward(const Var& z_t, const std::vector<int>& t, const Tensor& c_d, const Var& c_f,
                     const DenoiserParams& p, bool with_control = true);

}  // namespace ctxsr::diffusion

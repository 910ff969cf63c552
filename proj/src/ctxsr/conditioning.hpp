#pragma once

#include <cstdint>

#include "ctxsr/nn.hpp"

// Conditioning paths: the trainable LR embedder (c_f), its RGB read-out
// (X_RGB), the frozen random-feature image encoder (c_d) and zero-initialized
// 1×1 links.
namespace ctxsr::cond {

using ad::Var;

struct EmbedderConfig {
    int scale_factor = 4;   // LR → HR nearest upsample before embedding
    int patch_size = 2;     // stride of the second conv, matches the codec
    int hidden = 16;
    int out_channels = 12;  // latent channels
};

// 3 → hidden (3×3) → SiLU → out_channels (3×3, stride patch_size).
struct EmbedderParams {
    EmbedderConfig config;
    nn::Conv conv1, conv2;

    static EmbedderParams init(const EmbedderConfig& cfg, Rng& rng);
    void visit(const std::string& prefix, const nn::Visitor& f);
};

// (B, 3, h, w) LR image → (B, out_channels, h·s/p, w·s/p).
Var embed_condition(const Var& lr, const EmbedderParams& p);

struct ToRgbParams {
    nn::Conv proj;  // 1×1, C → 3
    int upsample = 2;

    static ToRgbParams init(int64_t channels, int upsample, Rng& rng);
    void visit(const std::string& prefix, const nn::Visitor& f);
};

// sigmoid(conv1×1(c_f)) upsampled by nearest neighbour to the HR grid.
Var cond_to_rgb(const Var& c_f, const ToRgbParams& p);

// Frozen random-weight encoder: three stride-2 3×3 convs with SiLU between.
// Weights are a pure function of the seed; never trained.
class FeatureEncoder {
public:
    explicit FeatureEncoder(uint64_t seed, int64_t feature_dim = 64);

    // (B, 3, H, W) with H, W divisible by 8 → (B, (H/8)·(W/8), feature_dim)
    Tensor operator()(const Tensor& image) const;
    uint64_t seed() const noexcept { return seed_; }
    int64_t feature_dim() const noexcept { return feature_dim_; }

private:
    uint64_t seed_;
    int64_t feature_dim_;
    nn::Conv c1_, c2_, c3_;
};

Tensor image_features(const Tensor& image, uint64_t seed, int64_t feature_dim = 64);

// All-zero 1×1 convolution.
nn::Conv make_zero_conv(int64_t in, int64_t out);
Var zero_conv(const Var& x, const nn::Conv& p);

}  // namespace ctxsr::cond

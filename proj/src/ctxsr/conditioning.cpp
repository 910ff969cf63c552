#include "ctxsr/conditioning.hpp"

#include "ctxsr/error.hpp"

namespace ctxsr::cond {

EmbedderParams EmbedderParams::init(const EmbedderConfig& cfg, Rng& rng) {
    if (cfg.scale_factor < 1 || cfg.patch_size < 1 || cfg.hidden < 1 || cfg.out_channels < 1)
        throw ValidationError("embedder: sizes must be positive");
    EmbedderParams p{cfg, nn::Conv::init(3, cfg.hidden, 3, 1, rng), nn::Conv::init(cfg.hidden, cfg.out_channels, 3, cfg.patch_size, rng)};
    return p;
}

void EmbedderParams::visit(const std::string& prefix, const nn::Visitor& f) {
    conv1.visit(prefix + ".conv1", f);
    conv2.visit(prefix + ".conv2", f);
}

Var embed_condition(const Var& lr, const EmbedderParams& p) {
    require_rank(lr.value(), 4, "embed_condition");
    if (lr.dim(1) != 3) throw DimensionError("embed_condition: expected RGB input, got " + shape_str(lr.shape()));
    const int64_t H = lr.dim(2) * p.config.scale_factor, W = lr.dim(3) * p.config.scale_factor;
    if (H % p.config.patch_size || W % p.config.patch_size)
        throw DimensionError("embed_condition: upsampled size " + std::to_string(H) + "x" + std::to_string(W) +
                             " does not match the codec grid of patch " + std::to_string(p.config.patch_size));
    Var up = ad::upsample_nearest(lr, p.config.scale_factor);
    Var out = p.conv2(ad::silu(p.conv1(up)));
    nn::require_finite(out, "embed_condition");
    return out;
}

ToRgbParams ToRgbParams::init(int64_t channels, int upsample, Rng& rng) {
    return {nn::Conv::init(channels, 3, 1, 1, rng), upsample};
}

void ToRgbParams::visit(const std::string& prefix, const nn::Visitor& f) { proj.visit(prefix + ".proj", f); }

Var cond_to_rgb(const Var& c_f, const ToRgbParams& p) {
    require_rank(c_f.value(), 4, "cond_to_rgb");
    return ad::upsample_nearest(ad::sigmoid(p.proj(c_f)), p.upsample);
}

namespace {
nn::Conv frozen(nn::Conv c) {
    c.weight.set_requires_grad(false);
    c.bias.set_requires_grad(false);
    return c;
}
}  // namespace

FeatureEncoder::FeatureEncoder(uint64_t seed, int64_t feature_dim) : seed_(seed), feature_dim_(feature_dim) {
    Rng rng(mix_seed(seed, 0xd1a0));
    c1_ = frozen(nn::Conv::init(3, 32, 3, 2, rng));
    c2_ = frozen(nn::Conv::init(32, feature_dim, 3, 2, rng));
    c3_ = frozen(nn::Conv::init(feature_dim, feature_dim, 3, 2, rng));
}

Tensor FeatureEncoder::operator()(const Tensor& image) const {
    require_rank(image, 4, "image_features");
    if (image.dim(2) % 8 || image.dim(3) % 8)
        throw DimensionError("image_features: size " + shape_str(image.shape()) + " not divisible by 8");
    Var x(image);
    Var f = c3_(ad::silu(c2_(ad::silu(c1_(x)))));
    return ad::nchw_to_tokens(f).value();
}

Tensor image_features(const Tensor& image, uint64_t seed, int64_t feature_dim) {
    return FeatureEncoder(seed, feature_dim)(image);
}

nn::Conv make_zero_conv(int64_t in, int64_t out) { return nn::Conv::zeros(in, out, 1); }

Var zero_conv(const Var& x, const nn::Conv& p) { return p(x); }

}  // namespace ctxsr::cond

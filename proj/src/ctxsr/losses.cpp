#include "ctxsr/losses.hpp"

#include <cmath>

#include "ctxsr/error.hpp"

namespace ctxsr::losses {

void LossWeights::validate() const {
    if (!(lambda_l >= 0) || !std::isfinite(lambda_l) || !(lambda_w >= 0) || !std::isfinite(lambda_w))
        throw ValidationError("loss weights must be finite and non-negative");
}

PerceptualExtractor::PerceptualExtractor(uint64_t seed, int tap_level) : seed_(seed), tap_level_(tap_level) {
    if (tap_level < 1 || tap_level > 3) throw ValidationError("perceptual tap level must be 1, 2 or 3");
    Rng rng(mix_seed(seed, 0xa1e7));
    const int64_t widths[4] = {3, 16, 32, 64};
    for (int l = 0; l < 3; ++l) {
        levels_[l] = nn::Conv::init(widths[l], widths[l + 1], 3, l == 0 ? 1 : 2, rng);
        levels_[l].weight.set_requires_grad(false);
        levels_[l].bias.set_requires_grad(false);
    }
}

Var PerceptualExtractor::features(const Var& image) const {
    Var h = image;
    for (int l = 0; l < tap_level_; ++l) h = ad::silu(levels_[l](h));
    return h;
}

Var denoising_loss(const Var& eps_hat, const Var& eps) { return ad::mean_squared_error(eps_hat, eps); }

Var perceptual_loss(const Tensor& x, const Var& x_rgb, const PerceptualExtractor& phi) {
    require_same_shape(x, x_rgb.value(), "perceptual_loss");
    Var target = phi.features(Var(x));
    return ad::mean_squared_error(phi.features(x_rgb), target);
}

Var distribution_loss(const Tensor& x, const Var& x_rgb) {
    require_same_shape(x, x_rgb.value(), "distribution_loss");
    return ad::mean_abs_error(x_rgb, Var(x));
}

double total_loss(double l_eps, double l_perc, double l_dist, const LossWeights& w) {
    return l_eps + w.lambda_l * l_perc + w.lambda_w * l_dist;
}

Var total_loss(const Var& l_eps, const Var& l_perc, const Var& l_dist, const LossWeights& w) {
    return ad::add(ad::add(l_eps, ad::scale(l_perc, w.lambda_l)), ad::scale(l_dist, w.lambda_w));
}

}  // namespace ctxsr::losses

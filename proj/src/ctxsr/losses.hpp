#pragma once

#include <cstdint>

#include "ctxsr/nn.hpp"

namespace ctxsr::losses {

using ad::Var;

struct LossWeights {
    double lambda_l = 2.0;  // perceptual
    double lambda_w = 0.3;  // distribution

    void validate() const;
};

// Frozen three-level conv stack standing in for a pretrained feature
// network. Level 1: 3→16 (stride 1), level 2: 16→32 (stride 2),
// level 3: 32→64 (stride 2); SiLU after each.
class PerceptualExtractor {
public:
    explicit PerceptualExtractor(uint64_t seed, int tap_level = 2);

    Var features(const Var& image) const;
    int tap_level() const noexcept { return tap_level_; }
    uint64_t seed() const noexcept { return seed_; }

private:
    uint64_t seed_;
    int tap_level_;
    nn::Conv levels_[3];
};

// mean((ε̂ − ε)²)
Var denoising_loss(const Var& eps_hat, const Var& eps);

// ‖φ_l(x_rgb) − φ_l(x)‖² / feature count. `x` is the ground truth and
// receives no gradient.
Var perceptual_loss(const Tensor& x, const Var& x_rgb, const PerceptualExtractor& phi);

// (1/N) Σ_k |x_k − x_rgb,k|
Var distribution_loss(const Tensor& x, const Var& x_rgb);

double total_loss(double l_eps, double l_perc, double l_dist, const LossWeights& w);
Var total_loss(const Var& l_eps, const Var& l_perc, const Var& l_dist, const LossWeights& w);

}  // namespace ctxsr::losses

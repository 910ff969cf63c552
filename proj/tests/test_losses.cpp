#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ctxsr/error.hpp"
#include "ctxsr/losses.hpp"
#include "ctxsr/metrics.hpp"

using namespace ctxsr;
using ad::Var;

namespace {

double value(const Var& v) { return v.value()[0]; }

}  // namespace

TEST_CASE("denoising loss") {
    Rng rng(1);
    const Tensor e = randn({2, 12, 3, 3}, rng);
    CHECK(value(losses::denoising_loss(Var(e), Var(e))) == 0.0);
    Tensor shifted = e;
    for (double& v : shifted.values()) v += 1.0;
    CHECK(value(losses::denoising_loss(Var(shifted), Var(e))) == doctest::Approx(1.0).epsilon(1e-15));
    const Tensor f = randn(e.shape(), rng);
    double s = 0;
    for (int64_t i = 0; i < e.numel(); ++i) s += (f[i] - e[i]) * (f[i] - e[i]);
    CHECK(std::abs(value(losses::denoising_loss(Var(f), Var(e))) - s / static_cast<double>(e.numel())) <= 1e-12);
}

TEST_CASE("distribution loss hand cases") {
    CHECK(value(losses::distribution_loss(Tensor({1, 3, 2, 2}, 0.3), Var(Tensor({1, 3, 2, 2}, 0.3)))) == 0.0);
    CHECK(std::abs(value(losses::distribution_loss(Tensor({1, 3, 2, 2}, 1.0), Var(Tensor({1, 3, 2, 2}, 0.0)))) - 1.0) <=
          1e-12);
    const Tensor x({1, 1, 1, 2}, {0.0, 0.5});
    const Tensor y({1, 1, 1, 2}, {0.25, 0.25});
    CHECK(std::abs(value(losses::distribution_loss(x, Var(y))) - 0.25) <= 1e-12);
    CHECK(value(losses::distribution_loss(y, Var(x))) == value(losses::distribution_loss(x, Var(y))));
}

TEST_CASE("property: the identity coupling bounds the exact W1 from above") {
    Rng rng(2);
    for (int trial = 0; trial < 1000; ++trial) {
        const Tensor x = rand_uniform({1, 3, 2, 2}, rng, 0, 1), y = rand_uniform({1, 3, 2, 2}, rng, 0, 1);
        CHECK(value(losses::distribution_loss(x, Var(y))) >= metrics::hist_w1(x, y) - 1e-9);
    }
}

TEST_CASE("perceptual loss") {
    Rng rng(3);
    const losses::PerceptualExtractor phi(9, 2);
    const Tensor x = rand_uniform({1, 3, 8, 8}, rng, 0, 1), y = rand_uniform({1, 3, 8, 8}, rng, 0, 1);
    CHECK(value(losses::perceptual_loss(x, Var(x), phi)) == 0.0);
    const double l = value(losses::perceptual_loss(x, Var(y), phi));
    CHECK(l > 0);
    // feature-loop oracle
    const Tensor fx = phi.features(Var(x)).value(), fy = phi.features(Var(y)).value();
    CHECK(fx.shape() == Shape{1, 32, 4, 4});
    double s = 0;
    for (int64_t i = 0; i < fx.numel(); ++i) s += (fx[i] - fy[i]) * (fx[i] - fy[i]);
    CHECK(std::abs(l - s / static_cast<double>(fx.numel())) <= 1e-10);
    CHECK(value(losses::perceptual_loss(y, Var(x), phi)) == doctest::Approx(l).epsilon(1e-14));
}

TEST_CASE("perceptual extractor is seeded and frozen") {
    Rng rng(4);
    const Var x(rand_uniform({1, 3, 8, 8}, rng, 0, 1));
    CHECK(losses::PerceptualExtractor(5).features(x).value() == losses::PerceptualExtractor(5).features(x).value());
    CHECK_FALSE(losses::PerceptualExtractor(5).features(x).value() == losses::PerceptualExtractor(6).features(x).value());
    CHECK_THROWS_AS(losses::PerceptualExtractor(5, 4), ValidationError);
}

TEST_CASE("weighted total") {
    const losses::LossWeights w{2.0, 0.3};
    CHECK(std::abs(losses::total_loss(1.0, 0.5, 0.2, w) - 2.06) <= 1e-12);
    CHECK(losses::total_loss(0.7, 0.5, 0.2, {0.0, 0.0}) == 0.7);
    CHECK(losses::total_loss(2.0, 1.0, 0.4, w) == doctest::Approx(2 * losses::total_loss(1.0, 0.5, 0.2, w)));
    const Var t = losses::total_loss(Var(Tensor({1}, 1.0)), Var(Tensor({1}, 0.5)), Var(Tensor({1}, 0.2)), w);
    CHECK(std::abs(value(t) - 2.06) <= 1e-12);
    CHECK_THROWS_AS((losses::LossWeights{-1.0, 0.0}.validate()), ValidationError);
}

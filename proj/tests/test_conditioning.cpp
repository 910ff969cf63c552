#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "ctxsr/conditioning.hpp"
#include "ctxsr/error.hpp"
#include "ctxsr/ops.hpp"

using namespace ctxsr;
using ad::Var;

TEST_CASE("embedder output sits on the latent grid") {
    Rng rng(1);
    const auto p = cond::EmbedderParams::init({4, 2, 16, 12}, rng);
    const Var c = cond::embed_condition(Var(rand_uniform({1, 3, 8, 8}, rng, 0, 1)), p);
    CHECK(c.shape() == Shape{1, 12, 16, 16});
}

TEST_CASE("zero input with zero biases embeds to zero") {
    Rng rng(2);
    auto p = cond::EmbedderParams::init({4, 2, 16, 12}, rng);
    p.conv1.bias.mutable_value().fill(0);
    p.conv2.bias.mutable_value().fill(0);
    const Tensor c = cond::embed_condition(Var(Tensor({1, 3, 4, 4})), p).value();
    for (double v : c.values()) CHECK(v == 0.0);
}

TEST_CASE("RGB read-out: three channels on the HR grid, 0.5 at zero") {
    Rng rng(3);
    auto p = cond::ToRgbParams::init(12, 2, rng);
    const Var rgb = cond::cond_to_rgb(Var(randn({2, 12, 4, 4}, rng)), p);
    CHECK(rgb.shape() == Shape{2, 3, 8, 8});
    p.proj.bias.mutable_value().fill(0);
    const Tensor mid = cond::cond_to_rgb(Var(Tensor({1, 12, 4, 4})), p).value();
    for (double v : mid.values()) CHECK(v == 0.5);
}

TEST_CASE("frozen features are deterministic and seed dependent") {
    Rng rng(4);
    const Tensor img = rand_uniform({2, 3, 32, 32}, rng, 0, 1);
    const Tensor a = cond::image_features(img, 7), b = cond::image_features(img, 7);
    CHECK(a.shape() == Shape{2, 16, 64});
    CHECK(a == b);
    CHECK_FALSE(a == cond::image_features(img, 8));
    const cond::FeatureEncoder enc(7);
    CHECK(enc(img) == a);
}

TEST_CASE("zero conv: silent at init, identity when set to identity") {
    Rng rng(5);
    auto z = cond::make_zero_conv(3, 3);
    const Tensor x = randn({1, 3, 4, 4}, rng);
    const Tensor silent = cond::zero_conv(Var(x), z).value();
    for (double v : silent.values()) CHECK(v == 0.0);
    Tensor eye({3, 3, 1, 1});
    for (int64_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
    z.weight.mutable_value() = eye;
    CHECK(cond::zero_conv(Var(x), z).value() == x);
}

TEST_CASE("zero conv weights receive gradient") {
    Rng rng(6);
    auto z = cond::make_zero_conv(3, 2);
    z.weight = Var(z.weight.value(), true);
    z.bias = Var(z.bias.value(), true);
    const Var x(randn({1, 3, 2, 2}, rng));
    const Tensor w = randn({1, 2, 2, 2}, rng);
    ad::backward(ad::weighted_sum(cond::zero_conv(x, z), w));
    const Tensor g = z.weight.grad();
    // d/dW[o, i] = Σ_hw w[o, hw] x[i, hw]
    for (int64_t o = 0; o < 2; ++o)
        for (int64_t i = 0; i < 3; ++i) {
            double expect = 0;
            for (int64_t k = 0; k < 4; ++k) expect += w[o * 4 + k] * x.value()[i * 4 + k];
            CHECK(g[o * 3 + i] == doctest::Approx(expect).epsilon(1e-13));
        }
    double mag = 0;
    for (double v : g.values()) mag += std::abs(v);
    CHECK(mag > 0);
}

TEST_CASE("embedder rejects images that do not map onto the codec grid") {
    Rng rng(7);
    const auto p = cond::EmbedderParams::init({4, 2, 16, 12}, rng);
    CHECK_THROWS_AS(cond::embed_condition(Var(Tensor({1, 1, 8, 8})), p), DimensionError);
}

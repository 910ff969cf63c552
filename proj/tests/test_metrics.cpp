#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "ctxsr/error.hpp"
#include "ctxsr/metrics.hpp"

using namespace ctxsr;

TEST_CASE("psnr") {
    Rng rng(1);
    const Tensor x = rand_uniform({1, 3, 8, 8}, rng, 0, 0.8);
    CHECK(metrics::psnr(x, x) == metrics::kPsnrCap);
    Tensor y = x;
    for (double& v : y.values()) v += 0.1;
    CHECK(metrics::psnr(x, y) == doctest::Approx(20.0).epsilon(1e-12));
    const Tensor z = rand_uniform(x.shape(), rng, 0, 1);
    double se = 0;
    for (int64_t i = 0; i < x.numel(); ++i) se += (x[i] - z[i]) * (x[i] - z[i]);
    CHECK(std::abs(metrics::psnr(x, z) - 10 * std::log10(x.numel() / se)) <= 1e-9);
    CHECK_THROWS_AS(metrics::psnr(x, Tensor({1, 3, 4, 4})), DimensionError);
}

TEST_CASE("psnr falls as noise grows") {
    Rng rng(2);
    const Tensor x = rand_uniform({1, 3, 16, 16}, rng, 0.3, 0.7);
    const Tensor n = randn(x.shape(), rng);
    double last = metrics::kPsnrCap;
    for (double sigma : {0.01, 0.05, 0.1}) {
        Tensor y = x;
        for (int64_t i = 0; i < y.numel(); ++i) y[i] += sigma * n[i];
        const double p = metrics::psnr(x, y);
        CHECK(p < last);
        last = p;
    }
}

TEST_CASE("ssim") {
    Rng rng(3);
    const Tensor x = rand_uniform({1, 3, 16, 16}, rng, 0, 1), y = rand_uniform({1, 3, 16, 16}, rng, 0, 1);
    CHECK(metrics::ssim(x, x) == 1.0);
    CHECK(metrics::ssim(x, y) == metrics::ssim(y, x));
    const double c1 = 0.01 * 0.01;
    const double expect = (2 * 0.2 * 0.8 + c1) / (0.2 * 0.2 + 0.8 * 0.8 + c1);
    CHECK(metrics::ssim(Tensor({1, 1, 8, 8}, 0.2), Tensor({1, 1, 8, 8}, 0.8)) == doctest::Approx(expect).epsilon(1e-14));
    CHECK_THROWS_AS(metrics::ssim(Tensor({1, 1, 4, 4}), Tensor({1, 1, 4, 4})), ValidationError);
}

TEST_CASE("hist_w1 cases") {
    const std::vector<double> a{0, 0}, b{1, 1}, c{0, 1}, d{0.5, 0.5}, e{1, 0};
    CHECK(metrics::hist_w1(a, b) == 1.0);
    CHECK(metrics::hist_w1(c, d) == 0.5);
    CHECK(metrics::hist_w1(c, e) == 0.0);
    CHECK_THROWS_AS(metrics::hist_w1(a, std::vector<double>{1}), DimensionError);
}

TEST_CASE("property: hist_w1 is a metric on empirical distributions") {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const Tensor x = randn({16}, rng), y = randn({16}, rng), z = randn({16}, rng);
        const double xy = metrics::hist_w1(x, y), yx = metrics::hist_w1(y, x);
        CHECK(xy >= 0);
        CHECK(xy == doctest::Approx(yx).epsilon(1e-14));
        CHECK(metrics::hist_w1(x, x) == 0.0);
        CHECK(metrics::hist_w1(x, z) <= xy + metrics::hist_w1(y, z) + 1e-12);
    }
}

TEST_CASE("latent histogram report") {
    Rng rng(5);
    const Tensor a = randn({1, 12, 4, 4}, rng, 0.5), b = randn({1, 12, 4, 4}, rng, 0.5);
    const auto same = metrics::latent_hist_report(a, a, 16);
    CHECK(same.w1 == 0.0);
    CHECK(same.density_a == same.density_b);
    const auto r = metrics::latent_hist_report(a, b, 16);
    REQUIRE(r.edges.size() == 17);
    double sa = 0, sb = 0;
    for (size_t i = 0; i < 16; ++i) {
        sa += r.density_a[i];
        sb += r.density_b[i];
    }
    CHECK(std::abs(sa - 1) <= 1e-9);
    CHECK(std::abs(sb - 1) <= 1e-9);
    const double width = r.edges[1] - r.edges[0];
    CHECK(std::abs(r.binned_w1 - r.w1) <= width);
    CHECK(r.w1 == metrics::hist_w1(a, b));
}

TEST_CASE("bicubic upsampling") {
    const Tensor flat = metrics::bicubic_upsample(Tensor({1, 3, 4, 4}, 0.4), 4);
    CHECK(flat.shape() == Shape{1, 3, 16, 16});
    for (double v : flat.values()) CHECK(v == doctest::Approx(0.4).epsilon(1e-14));
    Rng rng(6);
    const Tensor x = rand_uniform({1, 3, 4, 4}, rng, 0, 1);
    CHECK(metrics::bicubic_upsample(x, 1) == x);
}

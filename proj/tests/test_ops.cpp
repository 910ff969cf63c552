#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ctxsr/error.hpp"
#include "ctxsr/ops.hpp"
#include "ctxsr/rng.hpp"

using namespace ctxsr;
using ad::Var;

TEST_CASE("conv2d against a direct loop") {
    Rng rng(1);
    const Tensor x = randn({2, 3, 5, 5}, rng), w = randn({4, 3, 3, 3}, rng), b = randn({4}, rng);
    for (int stride : {1, 2}) {
        const Tensor y = ad::conv2d(Var(x), Var(w), Var(b), stride, 1).value();
        const int64_t Ho = (5 + 2 - 3) / stride + 1;
        REQUIRE(y.shape() == Shape{2, 4, Ho, Ho});
        for (int64_t n = 0; n < 2; ++n)
            for (int64_t o = 0; o < 4; ++o)
                for (int64_t i = 0; i < Ho; ++i)
                    for (int64_t j = 0; j < Ho; ++j) {
                        double s = b[o];
                        for (int64_t c = 0; c < 3; ++c)
                            for (int64_t ky = 0; ky < 3; ++ky)
                                for (int64_t kx = 0; kx < 3; ++kx) {
                                    const int64_t yy = i * stride + ky - 1, xx = j * stride + kx - 1;
                                    if (yy < 0 || yy >= 5 || xx < 0 || xx >= 5) continue;
                                    s += w.at(o, c, ky, kx) * x.at(n, c, yy, xx);
                                }
                        CHECK(y.at(n, o, i, j) == doctest::Approx(s).epsilon(1e-13));
                    }
    }
}

TEST_CASE("layer norm normalizes each token") {
    Rng rng(2);
    const Tensor x = randn({1, 4, 6}, rng, 3.0);
    const Tensor y = ad::layer_norm(Var(x), Var(Tensor({6}, 1.0)), Var(Tensor({6})), 0.0).value();
    for (int64_t t = 0; t < 4; ++t) {
        double m = 0, v = 0;
        for (int64_t c = 0; c < 6; ++c) m += y[t * 6 + c] / 6;
        for (int64_t c = 0; c < 6; ++c) v += (y[t * 6 + c] - m) * (y[t * 6 + c] - m) / 6;
        CHECK(std::abs(m) <= 1e-12);
        CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("backward through a small graph") {
    const Var a(Tensor({2}, {1.5, -2.0}), true), b(Tensor({2}, {0.5, 3.0}), true);
    ad::backward(ad::sum(ad::mul(a, ad::add(a, b))));
    // d/da Σ a(a+b) = 2a + b ; d/db = a
    CHECK(a.grad()[0] == 3.5);
    CHECK(a.grad()[1] == -1.0);
    CHECK(b.grad()[0] == 1.5);
    CHECK(b.grad()[1] == -2.0);
}

TEST_CASE("no-grad guard stops recording") {
    const Var a(Tensor({1}, 2.0), true);
    ad::NoGradGuard guard;
    CHECK_FALSE(ad::mul(a, a).requires_grad());
}

TEST_CASE("mismatched shapes raise dimension errors") {
    CHECK_THROWS_AS(ad::add(Var(Tensor({2})), Var(Tensor({3}))), DimensionError);
    CHECK_THROWS_AS(ad::conv2d(Var(Tensor({1, 2, 4, 4})), Var(Tensor({1, 3, 3, 3})), Var(Tensor({1})), 1, 1),
                    DimensionError);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ctxsr/error.hpp"
#include "ctxsr/gradcheck.hpp"

using namespace ctxsr;

TEST_CASE("central differences are exact on a quadratic") {
    const Tensor g = gradcheck::finite_diff(
        [](const Tensor& x) {
            double s = 0;
            for (double v : x.values()) s += v * v;
            return s;
        },
        Tensor({2}, {1.0, 2.0}), 1e-5);
    CHECK(std::abs(g[0] - 2.0) <= 1e-8);
    CHECK(std::abs(g[1] - 4.0) <= 1e-8);
    const Tensor z = gradcheck::finite_diff([](const Tensor&) { return 3.0; }, Tensor({3}, 1.0), 1e-5);
    for (double v : z.values()) CHECK(v == 0.0);
}

TEST_CASE("softmax then sum of squares against the analytic gradient") {
    auto softmax = [](const Tensor& x) {
        double m = x[0], s = 0;
        for (double v : x.values()) m = std::max(m, v);
        Tensor p(x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) s += (p[i] = std::exp(x[i] - m));
        for (double& v : p.values()) v /= s;
        return p;
    };
    const Tensor x({3}, {0.3, -1.2, 0.8});
    const Tensor g = gradcheck::finite_diff(
        [&](const Tensor& v) {
            const Tensor p = softmax(v);
            double s = 0;
            for (double q : p.values()) s += q * q;
            return s;
        },
        x, 1e-5);
    // d/dx_j Σ p_i² = 2 p_j (p_j − Σ p_i²)
    const Tensor p = softmax(x);
    double sq = 0;
    for (double q : p.values()) sq += q * q;
    for (int64_t j = 0; j < 3; ++j) CHECK(std::abs(g[j] - 2 * p[j] * (p[j] - sq)) <= 1e-7);
}

TEST_CASE("non-finite evaluations name the coordinate") {
    CHECK_THROWS_AS(gradcheck::finite_diff([](const Tensor& x) { return std::log(x[0]); }, Tensor({1}, 0.0), 1e-5),
                    NumericError);
    CHECK_THROWS_AS(gradcheck::finite_diff([](const Tensor&) { return 0.0; }, Tensor({1}), 0.0), ValidationError);
}

TEST_CASE("registry and individual checks") {
    CHECK(gradcheck::registered_ops().size() == 8);
    const auto r = gradcheck::check_op("local_attention", 1e-4, 7);
    CHECK(r.passed);
    CHECK(r.coordinates == 18);
    CHECK(gradcheck::check_op("distribution_loss", 1e-4, 3).passed);
    const auto never = gradcheck::check_op("cond_to_rgb", 0.0, 1);
    CHECK_FALSE(never.passed);
    CHECK(never.max_rel_err > 0);
    CHECK_FALSE(never.worst_index.empty());
    CHECK(gradcheck::format_report(never).find("FAIL") != std::string::npos);
}

TEST_CASE("unknown op lists the registry") {
    try {
        gradcheck::check_op("softmax", 1e-4, 1);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("lgcaa_forward") != std::string::npos);
    }
}

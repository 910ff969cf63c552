#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctxsr/error.hpp"
#include "ctxsr/lgcaa.hpp"
#include "ctxsr/ops.hpp"

using namespace ctxsr;
using ad::Var;

namespace {

lgcaa::AttentionConfig config(int heads, lgcaa::Variant v = lgcaa::Variant::Full) {
    lgcaa::AttentionConfig c;
    c.num_heads = heads;
    c.variant = v;
    return c;
}

// Applies a token permutation to (B, C, H, W): new token i = old token perm[i].
Tensor permute_tokens(const Tensor& x, const std::vector<int64_t>& perm) {
    const int64_t B = x.dim(0), C = x.dim(1), W = x.dim(3);
    Tensor out(x.shape());
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (size_t i = 0; i < perm.size(); ++i) {
                const int64_t src = perm[i], dst = static_cast<int64_t>(i);
                out.at(b, c, dst / W, dst % W) = x.at(b, c, src / W, src % W);
            }
    return out;
}

}  // namespace

TEST_CASE("shape is preserved") {
    Rng rng(1);
    const auto cfg = config(2);
    const auto p = lgcaa::AttentionParams::init(8, cfg, rng);
    const Var y = lgcaa::lgcaa_forward(Var(randn({2, 8, 4, 4}, rng)), p, cfg);
    CHECK(y.shape() == Shape{2, 8, 4, 4});
}

TEST_CASE("every variant and the windowed mode keep the shape") {
    Rng rng(2);
    for (auto v : {lgcaa::Variant::Plain, lgcaa::Variant::LocalOnly, lgcaa::Variant::GlobalOnly,
                   lgcaa::Variant::NoFinalNorm, lgcaa::Variant::Full}) {
        auto cfg = config(2, v);
        const auto p = lgcaa::AttentionParams::init(8, cfg, rng);
        CHECK(lgcaa::lgcaa_forward(Var(randn({1, 8, 4, 4}, rng)), p, cfg).shape() == Shape{1, 8, 4, 4});
        cfg.local_mode = lgcaa::LocalMode::Windowed;
        cfg.window = 2;
        CHECK(lgcaa::lgcaa_forward(Var(randn({1, 8, 4, 4}, rng)), p, cfg).shape() == Shape{1, 8, 4, 4});
        CHECK(lgcaa::variant_from_string(lgcaa::to_string(v)) == v);
    }
}

TEST_CASE("zero final MLP layer gives the zero map") {
    Rng rng(3);
    const auto cfg = config(1);
    const auto p = lgcaa::AttentionParams::init(4, cfg, rng, true);
    const Var y = lgcaa::lgcaa_forward(Var(randn({1, 4, 3, 3}, rng)), p, cfg);
    for (double v : y.value().values()) CHECK(v == 0.0);
}

TEST_CASE("identical keys give uniform attention") {
    Rng rng(4);
    Tensor k({1, 1, 5, 3});
    const Tensor row = randn({3}, rng);
    for (int64_t n = 0; n < 5; ++n)
        for (int64_t d = 0; d < 3; ++d) k[n * 3 + d] = row[d];
    const Tensor q = randn({1, 1, 5, 3}, rng), v = randn({1, 1, 5, 3}, rng);
    const Tensor w = ad::attention_weights(q, k);
    for (double x : w.values()) CHECK(x == doctest::Approx(0.2).epsilon(1e-14));
    const Tensor out = lgcaa::local_attention(Var(q), Var(k), Var(v), 1e-6).value();
    for (int64_t d = 0; d < 3; ++d) {
        double mean = 0;
        for (int64_t n = 0; n < 5; ++n) mean += v[n * 3 + d] / 5;
        for (int64_t n = 0; n < 5; ++n) CHECK(out[n * 3 + d] == doctest::Approx(mean).epsilon(1e-13));
    }
}

TEST_CASE("max-normalization of a constant tensor gives unit magnitudes") {
    const Tensor q({1, 2, 3, 2}, -2.5);
    const Tensor n = ad::max_normalize(Var(q), 1e-6).value();
    for (double v : n.values()) CHECK(v == -1.0);
}

TEST_CASE("two-token closed form") {
    const Var q(Tensor({1, 1, 2, 1}, {1.0, -1.0})), k(Tensor({1, 1, 2, 1}, {1.0, -1.0}));
    const Var v(Tensor({1, 1, 2, 1}, {0.0, 1.0}));
    const Tensor out = lgcaa::local_attention(q, k, v, 1e-6).value();
    const double e = std::exp(1.0), ie = std::exp(-1.0);
    CHECK(out[0] == doctest::Approx(ie / (e + ie)).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx(e / (e + ie)).epsilon(1e-14));
}

TEST_CASE("property: softmax rows sum to one") {
    Rng rng(5);
    std::uniform_int_distribution<int> n_dist(1, 9), d_dist(1, 6);
    for (int trial = 0; trial < 100; ++trial) {
        const int64_t n = n_dist(rng), d = d_dist(rng);
        const double scale = std::pow(10.0, static_cast<double>(trial % 7) - 3);
        const Tensor q = ad::max_normalize(Var(randn({1, 2, n, d}, rng, scale)), 1e-6).value();
        const Tensor k = ad::max_normalize(Var(randn({1, 2, n, d}, rng, scale)), 1e-6).value();
        const Tensor w = ad::attention_weights(q, k);
        for (int64_t r = 0; r < 2 * n; ++r) {
            double s = 0;
            for (int64_t c = 0; c < n; ++c) s += w[r * n + c];
            CHECK(std::abs(s - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("property: global attention output respects the clamp exactly") {
    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        auto cfg = config(trial % 2 + 1);
        cfg.clamp_lo = -0.5 - 0.01 * trial;
        cfg.clamp_hi = 0.25 + 0.01 * trial;
        const auto p = lgcaa::AttentionParams::init(4, cfg, rng);
        const Tensor y = lgcaa::global_attention(Var(randn({1, 6, 4}, rng, 10.0)), p, cfg).value();
        for (double v : y.values()) {
            CHECK(v >= cfg.clamp_lo);
            CHECK(v <= cfg.clamp_hi);
        }
    }
}

TEST_CASE("single token attends to itself") {
    Rng rng(7);
    const auto cfg = config(1);
    const auto p = lgcaa::AttentionParams::init(4, cfg, rng);
    const Tensor x = randn({1, 1, 4}, rng);
    const Tensor w = ad::attention_weights(randn({1, 1, 1, 3}, rng), randn({1, 1, 1, 3}, rng));
    CHECK(w[0] == 1.0);
    CHECK(lgcaa::global_attention(Var(x), p, cfg).value().all_finite());
}

TEST_CASE("property: all-zero queries and keys stay finite") {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        const int64_t n = 1 + trial % 6;
        const Var z(Tensor({1, 1, n, 2})), v(randn({1, 1, n, 2}, rng));
        const Tensor out = lgcaa::local_attention(z, z, v, 1e-6).value();
        CHECK(out.all_finite());
        auto cfg = config(1);
        const auto p = lgcaa::AttentionParams::init(4, cfg, rng);
        CHECK(lgcaa::lgcaa_forward(Var(Tensor({1, 4, 2, 2})), p, cfg).value().all_finite());
    }
}

TEST_CASE("property: full-sequence block is permutation equivariant") {
    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        auto cfg = config(trial % 2 + 1);
        const auto p = lgcaa::AttentionParams::init(4, cfg, rng);
        const Tensor x = randn({1, 4, 3, 3}, rng);
        std::vector<int64_t> perm(9);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        const Tensor a = permute_tokens(lgcaa::lgcaa_forward(Var(x), p, cfg).value(), perm);
        const Tensor b = lgcaa::lgcaa_forward(Var(permute_tokens(x, perm)), p, cfg).value();
        CHECK(max_abs_diff(a, b) <= 1e-12);
    }
}

TEST_CASE("invalid setups are rejected") {
    Rng rng(10);
    auto cfg = config(3);
    const auto p3 = lgcaa::AttentionParams::init(4, config(1), rng);
    CHECK_THROWS(lgcaa::lgcaa_forward(Var(randn({1, 4, 2, 2}, rng)), p3, cfg));
    cfg = config(1);
    cfg.local_mode = lgcaa::LocalMode::Windowed;
    cfg.window = 3;
    const auto p = lgcaa::AttentionParams::init(4, cfg, rng);
    CHECK_THROWS(lgcaa::lgcaa_forward(Var(randn({1, 4, 4, 4}, rng)), p, cfg));
    cfg = config(1);
    cfg.clamp_lo = 1;
    cfg.clamp_hi = -1;
    CHECK_THROWS_AS(cfg.validate(4, 2, 2), ValidationError);
}

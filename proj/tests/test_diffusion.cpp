#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <map>

#include "ctxsr/archive.hpp"
#include "ctxsr/error.hpp"
#include "ctxsr/hash.hpp"
#include "ctxsr/training.hpp"
#include "support.hpp"

using namespace ctxsr;
using namespace ctxsr::diffusion;

namespace {

RunConfig tiny_config() {
    RunConfig c;
    c.dataset.count = 2;
    c.dataset.hr_size = 16;
    c.model.width = 8;
    c.model.time_dim = 8;
    c.model.feature_dim = 8;
    c.model.embed_hidden = 4;
    c.train.steps = 4;
    c.train.batch = 1;
    c.train.lr = 1e-3;
    c.diffusion.sample_steps = 3;
    return c;
}

degradation::PairDataset tiny_data(const RunConfig& c) {
    return degradation::synth_dataset(c.dataset.count, c.dataset.hr_size, c.degradation, c.seed, c.model.patch_size);
}

std::map<std::string, Tensor> snapshot(DenoiserParams& p) {
    std::map<std::string, Tensor> m;
    p.visit([&](const std::string& name, ad::Var& v) { m.emplace(name, v.value()); });
    return m;
}

}  // namespace

TEST_CASE("linear schedule against an independent product") {
    const Schedule s = make_schedule(1000, 1e-4, 0.02);
    CHECK(s.betas[0] == 1e-4);
    CHECK(s.betas[999] == doctest::Approx(0.02).epsilon(1e-15));
    double prod = 1.0;
    for (int t = 1; t <= 10; ++t) prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0);
    CHECK(s.alpha_bar(10) == doctest::Approx(prod).epsilon(1e-14));
    for (int t = 2; t <= 1000; ++t) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    CHECK(s.alpha_bar(1000) < 1e-4);
    CHECK_THROWS_AS(make_schedule(10, 0.5, 0.1), ValidationError);
    CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.02), ValidationError);
}

TEST_CASE("forward noise special cases") {
    const Schedule s = make_schedule(1000, 1e-4, 0.02);
    Rng rng(1);
    const Tensor z0 = randn({1, 12, 2, 2}, rng), eps = randn({1, 12, 2, 2}, rng);
    const Tensor a = forward_noise(z0, 300, Tensor(z0.shape()), s);
    const Tensor b = forward_noise(Tensor(z0.shape()), 300, eps, s);
    for (int64_t i = 0; i < z0.numel(); ++i) {
        CHECK(a[i] == doctest::Approx(std::sqrt(s.alpha_bar(300)) * z0[i]).epsilon(1e-15));
        CHECK(b[i] == doctest::Approx(std::sqrt(1 - s.alpha_bar(300)) * eps[i]).epsilon(1e-15));
    }
    CHECK_THROWS_AS(forward_noise(z0, 0, eps, s), ValidationError);
    CHECK_THROWS_AS(forward_noise(z0, 1001, eps, s), ValidationError);
}

TEST_CASE("forward noise marginal by Monte Carlo") {
    const Schedule s = make_schedule(1000, 1e-4, 0.02);
    const int t = 250;
    const Tensor z0({1, 1, 1, 1}, 0.7);
    Rng rng(2);
    const int n = 100000;
    double sum = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
        const double z = forward_noise(z0, t, randn({1, 1, 1, 1}, rng), s)[0];
        sum += z;
        sq += z * z;
    }
    const double mean = sum / n, var = sq / n - mean * mean;
    CHECK(std::abs(var / (1 - s.alpha_bar(t)) - 1) < 0.02);
    CHECK(mean == doctest::Approx(std::sqrt(s.alpha_bar(t)) * 0.7).epsilon(0.02));
}

TEST_CASE("strided timesteps") {
    const auto ts = strided_timesteps(1000, 40);
    REQUIRE(ts.size() == 40);
    CHECK(ts.front() == 25);
    CHECK(ts.back() == 1000);
    for (size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] > ts[i - 1]);
    CHECK(strided_timesteps(10, 3) == std::vector<int>{3, 6, 10});
    CHECK(strided_timesteps(10, 10) == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
    CHECK_THROWS_AS(strided_timesteps(10, 11), ValidationError);
}

TEST_CASE("denoiser output shape and zero-conv identity at init") {
    const RunConfig c = tiny_config();
    DenoiserParams p = DenoiserParams::init(denoiser_config(c), 3);
    Rng rng(4);
    const Tensor z = randn({1, 12, 8, 8}, rng);
    const Tensor lr = rand_uniform({1, 3, 4, 4}, rng, 0, 1);
    const cond::FeatureEncoder enc(c.model.feature_seed, c.model.feature_dim);
    const Tensor c_d = condition_features(lr, 4, enc);
    const ad::Var c_f = cond::embed_condition(ad::Var(lr), p.embed);
    const Tensor with = denoiser_forward(ad::Var(z), {17}, c_d, c_f, p, true).value();
    const Tensor without = denoiser_forward(ad::Var(z), {17}, c_d, c_f, p, false).value();
    CHECK(with.shape() == z.shape());
    CHECK(with == without);
}

TEST_CASE("control branch starts as a copy of the down path") {
    DenoiserParams p = DenoiserParams::init(denoiser_config(tiny_config()), 5);
    auto all = snapshot(p);
    int copies = 0;
    for (const auto& [name, value] : all) {
        if (name.rfind("ctrl.", 0) != 0) continue;
        const std::string main = name.substr(5);
        if (name.rfind("ctrl.hint", 0) == 0 || name.rfind("ctrl.link", 0) == 0) {
            for (double v : value.values()) CHECK(v == 0.0);
            continue;
        }
        REQUIRE(all.count(main) == 1);
        CHECK(all.at(main) == value);
        ++copies;
    }
    CHECK(copies > 0);
}

TEST_CASE("freeze contract: non-attention tensors do not move") {
    RunConfig c = tiny_config();
    c.train.freeze_non_attention = true;
    const auto ds = tiny_data(c);
    DenoiserParams fresh = DenoiserParams::init(denoiser_config(c), c.seed);
    const auto before = snapshot(fresh);
    auto result = train(ds, c);
    const auto after = snapshot(result.params);
    int moved = 0;
    for (const auto& [name, value] : before) {
        if (trainable_when_frozen(name)) {
            moved += !(after.at(name) == value);
        } else {
            CHECK_MESSAGE(after.at(name) == value, name);
        }
    }
    CHECK(moved > 0);
    CHECK(trainable_when_frozen("down0.attn.proj_in.weight"));
    CHECK(trainable_when_frozen("ctrl.down0.res.c1.weight"));
    CHECK_FALSE(trainable_when_frozen("down0.res.c1.weight"));
}

TEST_CASE("zero loss weights log the denoising loss as the total") {
    RunConfig c = tiny_config();
    c.losses.weights = {0.0, 0.0};
    auto result = train(tiny_data(c), c);
    REQUIRE(result.log.size() == 4);
    for (const auto& r : result.log) CHECK(r.loss_total == r.loss_eps);
}

TEST_CASE("training is deterministic and leaves frozen features untouched") {
    const RunConfig c = tiny_config();
    const auto ds = tiny_data(c);
    const cond::FeatureEncoder enc(c.model.feature_seed, c.model.feature_dim);
    auto digest = [&] {
        std::string bytes;
        for (const auto& lr : ds.lr) {
            const Tensor f = condition_features(lr, 4, enc);
            bytes.append(reinterpret_cast<const char*>(f.data()), static_cast<size_t>(f.numel()) * sizeof(double));
        }
        return sha256_hex(bytes);
    };
    const std::string before = digest();
    auto a = train(ds, c), b = train(ds, c);
    CHECK(digest() == before);
    REQUIRE(a.log.size() == b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].loss_total == b.log[i].loss_total);
        CHECK(a.log[i].loss_eps == b.log[i].loss_eps);
    }
    CHECK(snapshot(a.params) == snapshot(b.params));
}

TEST_CASE("sampler: deterministic, HR shaped and finite for a fresh model") {
    const RunConfig c = tiny_config();
    const DenoiserParams p = DenoiserParams::init(denoiser_config(c), 6);
    const Schedule s = make_schedule(c.diffusion.T, c.diffusion.beta_start, c.diffusion.beta_end);
    const cond::FeatureEncoder enc(c.model.feature_seed, c.model.feature_dim);
    Rng rng(7);
    const Tensor lr = rand_uniform({1, 3, 4, 4}, rng, 0, 1);
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        const auto a = ddpm_sample(p, s, lr, 5, seed, enc);
        const auto b = ddpm_sample(p, s, lr, 5, seed, enc);
        CHECK(a.image == b.image);
        CHECK(a.z0_hat == b.z0_hat);
        CHECK(a.image.shape() == Shape{1, 3, 16, 16});
        CHECK(a.z0_hat.all_finite());
        for (double v : a.image.values()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("checkpoint round trip is bit exact") {
    test_support::TempDir dir("ckpt");
    const RunConfig c = tiny_config();
    auto result = train(tiny_data(c), c);
    save_checkpoint(dir.path() / "m.ckpt", result.params, c);
    auto loaded = load_checkpoint(dir.path() / "m.ckpt");
    CHECK(loaded.config.hash() == c.hash());
    CHECK(snapshot(loaded.params) == snapshot(result.params));
}

TEST_CASE("corrupt checkpoints are rejected with the file name") {
    test_support::TempDir dir("badckpt");
    const RunConfig c = tiny_config();
    DenoiserParams p = DenoiserParams::init(denoiser_config(c), 1);
    const auto path = dir.path() / "m.ckpt";
    save_checkpoint(path, p, c);
    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    try {
        load_checkpoint(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("m.ckpt") != std::string::npos);
    }
    std::ofstream(path, std::ios::binary) << "NOTANARCHIVE";
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
}

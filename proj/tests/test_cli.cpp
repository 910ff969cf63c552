#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ctxsr/commands.hpp"
#include "ctxsr/config.hpp"
#include "support.hpp"

using namespace ctxsr;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"({"run_name": "tiny", "seed": 3,
 "dataset": {"count": 2, "hr_size": 16},
 "model": {"width": 8, "time_dim": 8, "feature_dim": 8},
 "train": {"steps": 6, "batch": 1, "lr": 1e-3, "freeze_non_attention": false, "ablation_fraction": 0.5},
 "diffusion": {"sample_steps": 3},
 "metrics": {"sweep_steps": [2, 3], "sweep_seeds": [1]}})";

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

}  // namespace

TEST_CASE("config errors carry the offending line") {
    try {
        RunConfig::parse("{\n  \"seed\": 1,\n  \"train\": {\n    \"stpes\": 3\n  }\n}");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.line == 4);
        CHECK(std::string(e.what()).find("stpes") != std::string::npos);
    }
    try {
        RunConfig::parse("{\n \"train\": {\"lr\": -1}\n}");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.line == 2);
    }
    try {
        RunConfig::parse("{\n\n \"seed\": }");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.line == 3);
    }
    CHECK_THROWS_AS(RunConfig::parse("{\"train\": {\"batch\": \"two\"}}"), ConfigError);
}

TEST_CASE("canonical text round-trips and identifies the run") {
    const RunConfig a = RunConfig::parse(kTiny);
    const RunConfig b = RunConfig::parse(a.canonical_text());
    CHECK(a.canonical_text() == b.canonical_text());
    CHECK(a.hash() == b.hash());
    CHECK(a.hash().size() == 64);
    RunConfig c = a;
    c.seed = 4;
    CHECK(c.hash() != a.hash());
    CHECK(RunConfig{}.hash() == RunConfig::parse("{}").hash());
}

TEST_CASE("ablation grid") {
    const losses::LossWeights w{0.1, 0.3};
    const auto grid = cli::ablation_grid(w);
    REQUIRE(grid.size() == 9);
    CHECK(grid[4].variant == lgcaa::Variant::Full);
    CHECK(grid[8].variant == lgcaa::Variant::Full);
    CHECK(grid[4].lambda_l == grid[8].lambda_l);
    CHECK(grid[5].lambda_l == 0.0);
    CHECK(grid[5].lambda_w == 0.0);
    RunConfig cfg;
    cfg.train.steps = 10;
    cfg.train.ablation_fraction = 0.01;
    CHECK(cli::ablation_steps(cfg) == 1);
}

TEST_CASE("commands write their artifacts from persisted inputs") {
    test_support::TempDir tmp("cli");
    const RunConfig cfg = RunConfig::parse(kTiny);
    std::vector<std::string> messages;
    cli::Context ctx{tmp.path(), false, [&](const std::string& m) { messages.push_back(m); }};

    const fs::path data = cli::cmd_degrade(cfg, ctx);
    CHECK(data == tmp.path() / "tiny" / "degrade");
    CHECK(slurp(data / "config.hash").find(cfg.hash()) == 0);
    CHECK_THROWS_AS(cli::cmd_degrade(cfg, ctx), ExistsError);
    cli::Context forced = ctx;
    forced.force = true;
    CHECK(cli::cmd_degrade(cfg, forced) == data);

    const fs::path train = cli::cmd_train(cfg, data, ctx);
    REQUIRE(fs::exists(train / "model.ckpt"));
    const auto loss_lines = lines(train / "losses.csv");
    REQUIRE(loss_lines.size() == 2 + 6);
    CHECK(loss_lines[0] == "# config_hash=" + cfg.hash());
    CHECK(loss_lines[1] == "step,loss_eps,loss_perceptual,loss_distribution,loss_total");

    const fs::path eval = cli::cmd_eval(train / "model.ckpt", data, ctx);
    const auto metric_lines = lines(eval / "metrics.csv");
    REQUIRE(metric_lines.size() == 2 + 2 + 1);
    CHECK(metric_lines.back().rfind("mean,", 0) == 0);
    CHECK(lines(eval / "latent_hist.csv").size() == 2 + static_cast<size_t>(cfg.metrics.hist_bins));

    const fs::path sweep = cli::cmd_sweep(train / "model.ckpt", data, {2, 3}, {1}, ctx);
    const std::string first = slurp(sweep / "sweep.csv");
    CHECK(lines(sweep / "sweep.csv").size() == 2 + 2);
    cli::cmd_sweep(train / "model.ckpt", data, {2, 3}, {1}, forced);
    CHECK(slurp(sweep / "sweep.csv") == first);

    const fs::path sample = cli::cmd_sample(train / "model.ckpt", data / "pair_0001_lr.ppm", 2, 5, ctx);
    CHECK(fs::exists(sample / "sr_pair_0001_lr.ppm"));
    CHECK(fs::exists(sample / "z0_pair_0001_lr.ckpt"));
    CHECK_FALSE(messages.empty());
}

TEST_CASE("train refuses a dataset at another scale") {
    test_support::TempDir tmp("cli_scale");
    RunConfig cfg = RunConfig::parse(kTiny);
    cli::Context ctx{tmp.path(), false, {}};
    const fs::path data = cli::cmd_degrade(cfg, ctx);
    cfg.degradation.scale_factor = 2;
    CHECK_THROWS_AS(cli::cmd_train(cfg, data, ctx), DimensionError);
}

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ctxsr/ctxsr.h"

namespace {

struct Globals {
    std::string config;
    uint64_t seed = 0;
    bool seed_set = false;
    std::string out = "out";
    bool force = false;
};

void print_line(const char* line, void*) { std::fprintf(stderr, "%s\n", line); }

int report(ctxsr_status s) {
    if (s != CTXSR_OK) std::fprintf(stderr, "error (%s): %s\n", ctxsr_status_name(s), ctxsr_last_error());
    return static_cast<int>(s);
}

using ConfigPtr = std::unique_ptr<ctxsr_config, decltype(&ctxsr_config_free)>;

// Loads --config (or defaults) and applies --seed.
ctxsr_status load_config(const Globals& g, ConfigPtr& out) {
    ctxsr_config* raw = nullptr;
    const ctxsr_status s = g.config.empty() ? ctxsr_config_default(&raw) : ctxsr_config_load(g.config.c_str(), &raw);
    if (s != CTXSR_OK) return s;
    out.reset(raw);
    return g.seed_set ? ctxsr_config_set_seed(raw, g.seed) : CTXSR_OK;
}

int finish(ctxsr_status s, const char* dir) {
    if (s == CTXSR_OK) std::printf("%s\n", dir);
    return report(s);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Context-aware latent diffusion super-resolution (toy scale)"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", ctxsr_version());

    Globals g;
    app.add_option("--config", g.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
    app.add_option_function<uint64_t>(
        "--seed",
        [&](const uint64_t& v) {
            g.seed = v;
            g.seed_set = true;
        },
        "Override the run seed (sampling seed for `sample`)");
    app.add_option("--out", g.out, "Output root")->capture_default_str();
    app.add_flag("--force", g.force, "Replace an existing output directory");

    std::string data, checkpoint, input;
    int steps = 0;
    std::vector<int> steps_list;
    std::vector<uint64_t> seeds_list;
    double tol = 1e-4, h = 1e-5;
    int gc_seeds = 5;

    auto* degrade = app.add_subcommand("degrade", "Generate and persist the synthetic pair dataset");
    auto* train = app.add_subcommand("train", "Train the denoiser; writes model.ckpt and losses.csv");
    train->add_option("--data", data, "Pair directory from `degrade`")->required()->check(CLI::ExistingDirectory);
    auto* sample = app.add_subcommand("sample", "Super-resolve LR images with a trained checkpoint");
    sample->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    sample->add_option("--input", input, "LR PPM or directory of PPMs")->required()->check(CLI::ExistingPath);
    sample->add_option("--steps", steps, "Sampling steps (0: checkpoint default)");
    auto* eval = app.add_subcommand("eval", "PSNR/SSIM table and latent histogram report");
    eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    eval->add_option("--data", data)->required()->check(CLI::ExistingDirectory);
    auto* sweep = app.add_subcommand("sweep", "Perception-distortion sweep over sampling steps and seeds");
    sweep->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    sweep->add_option("--data", data)->required()->check(CLI::ExistingDirectory);
    sweep->add_option("--steps", steps_list, "Sampling steps (default: from the checkpoint config)")->delimiter(',');
    sweep->add_option("--seeds", seeds_list, "Seeds (default: from the checkpoint config)")->delimiter(',');
    auto* ablate = app.add_subcommand("ablate", "Train and score the attention/loss ablation grid");
    ablate->add_option("--data", data)->required()->check(CLI::ExistingDirectory);
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
    gradcheck->add_option("--tol", tol, "Relative error tolerance")->capture_default_str();
    gradcheck->add_option("--seeds", gc_seeds, "Seeds per op")->capture_default_str();
    gradcheck->add_option("--step-size", h, "Finite-difference step")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    ctxsr_context ctx{g.out.c_str(), g.force ? 1 : 0, print_line, nullptr};
    char dir[4096] = {0};
    ConfigPtr cfg(nullptr, ctxsr_config_free);

    if (*degrade || *train || *ablate) {
        if (ctxsr_status s = load_config(g, cfg); s != CTXSR_OK) return report(s);
    }
    if (*degrade) return finish(ctxsr_cmd_degrade(cfg.get(), &ctx, dir, sizeof dir), dir);
    if (*train) return finish(ctxsr_cmd_train(cfg.get(), data.c_str(), &ctx, dir, sizeof dir), dir);
    if (*ablate) return finish(ctxsr_cmd_ablate(cfg.get(), data.c_str(), &ctx, dir, sizeof dir), dir);
    if (*sample)
        return finish(ctxsr_cmd_sample(checkpoint.c_str(), input.c_str(), steps, g.seed, &ctx, dir, sizeof dir), dir);
    if (*eval) return finish(ctxsr_cmd_eval(checkpoint.c_str(), data.c_str(), &ctx, dir, sizeof dir), dir);
    if (*sweep)
        return finish(ctxsr_cmd_sweep(checkpoint.c_str(), data.c_str(), steps_list.data(), steps_list.size(),
                                      seeds_list.data(), seeds_list.size(), &ctx, dir, sizeof dir),
                      dir);
    if (*gradcheck) {
        const ctxsr_status s = ctxsr_gradcheck(
            tol, gc_seeds, h, [](const char* line, void*) { std::printf("%s\n", line); }, nullptr);
        return report(s);
    }
    return 0;
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ctxsr/config.hpp"
#include "ctxsr/gradcheck.hpp"

// Experiment commands. Each writes into <out>/<run_name>/<command>/ together
// with a copy of the run config; CSVs start with `# config_hash=<hex>`.
namespace ctxsr::cli {

namespace fs = std::filesystem;

// Receives warnings and progress lines.
using MessageFn = std::function<void(const std::string&)>;

struct Context {
    fs::path out = "out";
    bool force = false;  // replace an existing output directory
    MessageFn message;
};

// Each returns the directory it wrote.
fs::path cmd_degrade(const RunConfig& cfg, const Context& ctx);
fs::path cmd_train(const RunConfig& cfg, const fs::path& data_dir, const Context& ctx);
// `lr_input` is one PPM or a directory of them; outputs sr_<stem>.ppm and
// z0_<stem>.ckpt per image. steps == 0 uses the checkpoint's sample_steps.
fs::path cmd_sample(const fs::path& checkpoint, const fs::path& lr_input, int steps, uint64_t seed,
                    const Context& ctx);
// Per-pair PSNR/SSIM table plus the latent histogram report. Sampling uses
// the checkpoint's sample_steps and seed.
fs::path cmd_eval(const fs::path& checkpoint, const fs::path& data_dir, const Context& ctx);
fs::path cmd_sweep(const fs::path& checkpoint, const fs::path& data_dir, const std::vector<int>& steps_list,
                   const std::vector<uint64_t>& seeds, const Context& ctx);
fs::path cmd_ablate(const RunConfig& cfg, const fs::path& data_dir, const Context& ctx);

struct AblationCell {
    std::string label;
    lgcaa::Variant variant;
    double lambda_l, lambda_w;
};
// Attention variants under the configured loss weights, then loss variants
// under the full block; the full/full cell appears in both halves.
std::vector<AblationCell> ablation_grid(const losses::LossWeights& w);
int ablation_steps(const RunConfig& cfg);

std::vector<gradcheck::GradReport> cmd_gradcheck(double tol, int seeds, double h);

// Creates <out>/<run_name>/<command>, refusing an existing one unless
// ctx.force, and writes config.json and config.hash.
fs::path prepare_output(const RunConfig& cfg, const std::string& command, const Context& ctx);

}  // namespace ctxsr::cli

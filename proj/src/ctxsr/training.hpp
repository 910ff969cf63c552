#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "ctxsr/config.hpp"
#include "ctxsr/degradation.hpp"
#include "ctxsr/diffusion.hpp"

// Training loop, checkpoints and the DDPM sampler.
namespace ctxsr::diffusion {

DenoiserConfig denoiser_config(const RunConfig& cfg);

struct LossRecord {
    int step = 0;
    double loss_eps = 0, loss_perceptual = 0, loss_distribution = 0, loss_total = 0;
};

struct TrainResult {
    DenoiserParams params;
    std::vector<LossRecord> log;
};

using ProgressFn = std::function<void(const LossRecord&)>;

// Adam on the trainable set for cfg.train.steps steps. Deterministic in
// (dataset, cfg). If the total loss or a gradient goes non-finite, the
// parameters from the last finite step are written to `last_good` (when
// non-empty) and NumericError is thrown.
TrainResult train(const degradation::PairDataset& ds, const RunConfig& cfg,
                  const std::filesystem::path& last_good = {}, const ProgressFn& progress = {});

// c_d tokens for LR images: the frozen encoder on the nearest-upsampled LR.
Tensor condition_features(const Tensor& lr, int scale_factor, const cond::FeatureEncoder& enc);

void save_checkpoint(const std::filesystem::path& path, DenoiserParams& params, const RunConfig& cfg);

struct Checkpoint {
    RunConfig config;
    DenoiserParams params;
};
// Rebuilds the model from the embedded config and overwrites every tensor.
// Throws FormatError on missing or misshapen entries.
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct SampleResult {
    Tensor z0_hat;  // final latent
    Tensor image;   // decoded, clipped to [0, 1]
};

// Ancestral DDPM over strided_timesteps(T, steps) from pure noise,
// conditioned on `lr` (B, 3, h, w). x̂_0 is clamped to [-1, 1] at each step.
SampleResult ddpm_sample(const DenoiserParams& p, const Schedule& s, const Tensor& lr, int steps, uint64_t seed,
                         const cond::FeatureEncoder& enc);

// Stacks (1, C, H, W) items into (B, C, H, W).
Tensor stack_batch(const std::vector<const Tensor*>& items);

}  // namespace ctxsr::diffusion

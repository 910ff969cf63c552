#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctxsr/degradation.hpp"
#include "ctxsr/error.hpp"
#include "ctxsr/lgcaa.hpp"
#include "ctxsr/losses.hpp"

namespace ctxsr {

// Invalid run configuration; `line` is 1-based (0 when unknown). `key` is
// the dotted field a range check rejected, if any.
struct ConfigError : ValidationError {
    ConfigError(int line, const std::string& what, std::string key = {})
        : ValidationError(line > 0 ? "config line " + std::to_string(line) + ": " + what : "config: " + what),
          line(line),
          key(std::move(key)),
          detail(what) {}
    int line;
    std::string key;
    std::string detail;
};

struct DatasetConfig {
    int count = 8;
    int hr_size = 32;
};

struct ModelConfig {
    int width = 32;
    int time_dim = 32;
    int feature_dim = 64;
    uint64_t feature_seed = 1234;  // frozen image-feature encoder
    int embed_hidden = 16;
    int patch_size = 2;  // codec patch
};

struct DiffusionConfig {
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int sample_steps = 40;
};

struct TrainConfig {
    int steps = 2000;
    int batch = 4;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double grad_clip = 1.0;  // global L2 norm bound; 0 disables
    bool freeze_non_attention = true;
    double ablation_fraction = 0.25;  // per-cell share of `steps` in ablations
};

struct LossConfig {
    losses::LossWeights weights;
    uint64_t perceptual_seed = 4321;
    int tap_level = 2;
};

struct MetricsConfig {
    int hist_bins = 32;
    std::vector<int> sweep_steps{5, 10, 20};
    std::vector<uint64_t> sweep_seeds{1, 2};
};

struct RunConfig {
    std::string run_name = "run";
    uint64_t seed = 0;
    degradation::DegradationConfig degradation;
    DatasetConfig dataset;
    lgcaa::AttentionConfig attention;
    ModelConfig model;
    DiffusionConfig diffusion;
    TrainConfig train;
    LossConfig losses;
    MetricsConfig metrics;

    int latent_channels() const { return 3 * model.patch_size * model.patch_size; }

    // Throws ConfigError for out-of-range values.
    void validate() const;
    // Sorted-key compact JSON of every field; its SHA-256 identifies the run.
    std::string canonical_text() const;
    std::string hash() const;

    // Missing keys keep their defaults; unknown keys and type errors throw
    // ConfigError with the offending line.
    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::string& path);
};

}  // namespace ctxsr

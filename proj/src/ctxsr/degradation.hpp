#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ctxsr/tensor.hpp"

// Procedural HR images and a blur → downsample → noise degradation
// pipeline producing paired (HR, LR) datasets.
namespace ctxsr::degradation {

enum class Stage { Blur, Downsample, Noise };
enum class BlurKind { Gaussian, Box };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct DegradationConfig {
    double blur_sigma = 1.0;
    int blur_kernel = 5;  // odd ≥ 3 for Gaussian; any ≥ 1 for Box
    BlurKind blur_kind = BlurKind::Gaussian;
    int scale_factor = 4;
    double noise_sigma = 0.02;
    std::vector<Stage> stage_order{Stage::Blur, Stage::Downsample, Stage::Noise};
    uint64_t seed = 0;

    void validate() const;
    // Compact JSON with sorted keys; the hash input for manifests.
    std::string canonical_text() const;
    std::string hash() const;
    static DegradationConfig from_canonical_text(const std::string& text);
};

// Normalized 1-D Gaussian taps of odd length `size`.
std::vector<double> gaussian_taps(double sigma, int size);

// Separable Gaussian blur with reflect padding.
Tensor gaussian_blur(const Tensor& image, double sigma, int size);
// Mean over the size×size window anchored at each pixel's top-left,
// reflect padding past the far edges.
Tensor box_blur(const Tensor& image, int size);
// Keeps pixel (f·i, f·j).
Tensor decimate(const Tensor& image, int factor);
Tensor add_noise(const Tensor& image, double sigma, uint64_t seed);

// Runs the configured stages in order and clips to [0, 1]. Deterministic
// in (hr, cfg). Throws DimensionError for sizes not divisible by the scale
// and ValidationError for non-finite input.
Tensor degrade(const Tensor& hr, const DegradationConfig& cfg);

constexpr int kGeneratorFamilies = 4;
const char* generator_name(int family);
// (1, 3, size, size) image on the 8-bit grid.
Tensor generate_hr(int family, int size, uint64_t seed);

struct PairRecord {
    std::string generator;
    uint64_t seed = 0;
    std::string config_hash;
};

struct PairDataset {
    std::vector<Tensor> hr;  // each (1, 3, H, W)
    std::vector<Tensor> lr;  // each (1, 3, H/s, W/s)
    std::vector<PairRecord> manifest;
    DegradationConfig config;
    uint64_t seed = 0;

    size_t size() const { return hr.size(); }
};

// Cycles the generator families; pair i uses noise/generator streams keyed
// by (seed, i). `patch_size` is the codec patch the HR size must respect.
PairDataset synth_dataset(int count, int hr_size, const DegradationConfig& cfg, uint64_t seed, int patch_size = 2);

void save_pairs(const PairDataset& ds, const std::filesystem::path& dir);

struct LoadedPairs {
    PairDataset dataset;
    std::vector<std::string> warnings;  // integrity mismatches
};
LoadedPairs load_pairs(const std::filesystem::path& dir);

inline constexpr const char* kManifestName = "manifest.json";

}  // namespace ctxsr::degradation

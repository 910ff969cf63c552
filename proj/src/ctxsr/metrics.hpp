#pragma once

#include <cstdint>
#include <vector>

#include "ctxsr/degradation.hpp"
#include "ctxsr/losses.hpp"
#include "ctxsr/training.hpp"

namespace ctxsr::metrics {

inline constexpr double kPsnrCap = 100.0;

// 10·log10(1 / MSE) for unit dynamic range, capped at kPsnrCap.
double psnr(const Tensor& x, const Tensor& y);

// Mean SSIM over non-overlapping window×window tiles and channels,
// K1 = 0.01, K2 = 0.03. Partial tiles at the far edges are skipped.
double ssim(const Tensor& x, const Tensor& y, int window = 8);

// Exact 1-D Wasserstein-1 between the empirical distributions of the
// flattened inputs: mean |sort(a) − sort(b)|.
double hist_w1(std::span<const double> a, std::span<const double> b);
double hist_w1(const Tensor& a, const Tensor& b);

struct HistReport {
    std::vector<double> edges;  // bins + 1 shared edges
    std::vector<double> density_a, density_b;  // each sums to 1
    double w1 = 0;         // exact, from raw values
    double binned_w1 = 0;  // Σ |CDF_a − CDF_b| · bin width
};

HistReport latent_hist_report(const Tensor& z0, const Tensor& z0_hat, int bins);

// Keys cubic convolution (a = −0.5), half-pixel centres, clamped borders,
// output clipped to [0, 1].
Tensor bicubic_upsample(const Tensor& image, int factor);

struct MetricsRecord {
    double psnr_db = 0;
    double ssim = 0;
    double hist_w1 = 0;
    double perc_dist = 0;  // surrogate-LPIPS: perceptual_loss under the frozen extractor
    int steps = 0;
    uint64_t seed = 0;
    double wallclock_s = 0;
};

// Samples every pair for each (steps, seed) and records mean metrics.
std::vector<MetricsRecord> pd_sweep(const diffusion::DenoiserParams& p, const diffusion::Schedule& s,
                                    const degradation::PairDataset& ds, const std::vector<int>& steps_list,
                                    const std::vector<uint64_t>& seeds, const cond::FeatureEncoder& enc,
                                    const losses::PerceptualExtractor& phi);

// Samples every pair once and scores it against its HR target.
MetricsRecord evaluate(const diffusion::DenoiserParams& p, const diffusion::Schedule& s,
                       const degradation::PairDataset& ds, int steps, uint64_t seed, const cond::FeatureEncoder& enc,
                       const losses::PerceptualExtractor& phi, std::vector<diffusion::SampleResult>* samples = nullptr);

}  // namespace ctxsr::metrics

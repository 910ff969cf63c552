#include "ctxsr/metrics.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>

#include "ctxsr/codec.hpp"
#include "ctxsr/error.hpp"

namespace ctxsr::metrics {

double psnr(const Tensor& x, const Tensor& y) {
    require_same_shape(x, y, "psnr");
    if (x.numel() == 0) throw DimensionError("psnr: empty images");
    double se = 0;
    for (int64_t i = 0; i < x.numel(); ++i) se += (x[i] - y[i]) * (x[i] - y[i]);
    const double mse = se / static_cast<double>(x.numel());
    if (mse == 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Tensor& x, const Tensor& y, int window) {
    require_same_shape(x, y, "ssim");
    require_rank(x, 4, "ssim");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (window < 1 || H < window || W < window)
        throw ValidationError("ssim: image " + shape_str(x.shape()) + " smaller than the " + std::to_string(window) +
                              "x" + std::to_string(window) + " window");
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    const double n = static_cast<double>(window) * window;
    double total = 0;
    int64_t count = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t ty = 0; ty + window <= H; ty += window)
                for (int64_t tx = 0; tx + window <= W; tx += window) {
                    double mx = 0, my = 0;
                    for (int64_t i = 0; i < window; ++i)
                        for (int64_t j = 0; j < window; ++j) {
                            mx += x.at(b, c, ty + i, tx + j);
                            my += y.at(b, c, ty + i, tx + j);
                        }
                    mx /= n;
                    my /= n;
                    double vx = 0, vy = 0, cxy = 0;
                    for (int64_t i = 0; i < window; ++i)
                        for (int64_t j = 0; j < window; ++j) {
                            const double dx = x.at(b, c, ty + i, tx + j) - mx, dy = y.at(b, c, ty + i, tx + j) - my;
                            vx += dx * dx;
                            vy += dy * dy;
                            cxy += dx * dy;
                        }
                    vx /= n;
                    vy /= n;
                    cxy /= n;
                    total += ((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
                    ++count;
                }
    return total / static_cast<double>(count);
}

double hist_w1(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw DimensionError("hist_w1: element counts differ (" + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()) + ")");
    if (a.empty()) return 0.0;
    std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    double s = 0;
    for (size_t i = 0; i < sa.size(); ++i) s += std::abs(sa[i] - sb[i]);
    return s / static_cast<double>(sa.size());
}

double hist_w1(const Tensor& a, const Tensor& b) { return hist_w1(a.values(), b.values()); }

HistReport latent_hist_report(const Tensor& z0, const Tensor& z0_hat, int bins) {
    if (bins < 2) throw ValidationError("latent_hist_report: bins must be >= 2");
    require_same_shape(z0, z0_hat, "latent_hist_report");
    if (z0.numel() == 0) throw DimensionError("latent_hist_report: empty input");
    const auto [amin, amax] = std::minmax_element(z0.values().begin(), z0.values().end());
    const auto [bmin, bmax] = std::minmax_element(z0_hat.values().begin(), z0_hat.values().end());
    double lo = std::min(*amin, *bmin), hi = std::max(*amax, *bmax);
    if (lo == hi) {
        lo -= 0.5;
        hi += 0.5;
    }
    HistReport r;
    const double width = (hi - lo) / bins;
    for (int i = 0; i <= bins; ++i) r.edges.push_back(i == bins ? hi : lo + width * i);
    auto histogram = [&](const Tensor& t) {
        std::vector<double> d(static_cast<size_t>(bins), 0.0);
        for (double v : t.values()) {
            const auto k = std::clamp(static_cast<int64_t>((v - lo) / width), int64_t{0}, int64_t{bins - 1});
            d[static_cast<size_t>(k)] += 1.0;
        }
        for (double& v : d) v /= static_cast<double>(t.numel());
        return d;
    };
    r.density_a = histogram(z0);
    r.density_b = histogram(z0_hat);
    double ca = 0, cb = 0;
    for (int i = 0; i < bins; ++i) {
        ca += r.density_a[static_cast<size_t>(i)];
        cb += r.density_b[static_cast<size_t>(i)];
        r.binned_w1 += std::abs(ca - cb) * width;
    }
    r.w1 = hist_w1(z0, z0_hat);
    return r;
}

namespace {

std::array<double, 4> keys_weights(double frac) {
    constexpr double a = -0.5;
    auto k = [](double d) {
        d = std::abs(d);
        if (d <= 1) return ((a + 2) * d - (a + 3)) * d * d + 1;
        if (d < 2) return ((a * d - 5 * a) * d + 8 * a) * d - 4 * a;
        return 0.0;
    };
    return {k(1 + frac), k(frac), k(1 - frac), k(2 - frac)};
}

}  // namespace

Tensor bicubic_upsample(const Tensor& image, int factor) {
    require_rank(image, 4, "bicubic_upsample");
    if (factor < 1) throw ValidationError("bicubic_upsample: factor must be >= 1");
    const int64_t B = image.dim(0), C = image.dim(1), H = image.dim(2), W = image.dim(3);
    const int64_t Ho = H * factor, Wo = W * factor;
    // Separable: rows first, then columns.
    Tensor tmp({B, C, H, Wo}), out({B, C, Ho, Wo});
    auto sample_axis = [&](int64_t o, int64_t n, std::array<int64_t, 4>& idx) {
        const double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
        const double base = std::floor(src);
        for (int k = 0; k < 4; ++k) idx[k] = std::clamp(static_cast<int64_t>(base) - 1 + k, int64_t{0}, n - 1);
        return keys_weights(src - base);
    };
    std::array<int64_t, 4> idx;
    for (int64_t ox = 0; ox < Wo; ++ox) {
        const auto w = sample_axis(ox, W, idx);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t y = 0; y < H; ++y) {
                    double s = 0;
                    for (int k = 0; k < 4; ++k) s += w[k] * image.at(b, c, y, idx[k]);
                    tmp.at(b, c, y, ox) = s;
                }
    }
    for (int64_t oy = 0; oy < Ho; ++oy) {
        const auto w = sample_axis(oy, H, idx);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t x = 0; x < Wo; ++x) {
                    double s = 0;
                    for (int k = 0; k < 4; ++k) s += w[k] * tmp.at(b, c, idx[k], x);
                    out.at(b, c, oy, x) = std::clamp(s, 0.0, 1.0);
                }
    }
    return out;
}

MetricsRecord evaluate(const diffusion::DenoiserParams& p, const diffusion::Schedule& s,
                       const degradation::PairDataset& ds, int steps, uint64_t seed, const cond::FeatureEncoder& enc,
                       const losses::PerceptualExtractor& phi, std::vector<diffusion::SampleResult>* samples) {
    if (ds.size() == 0) throw ValidationError("evaluate: dataset is empty");
    const auto t0 = std::chrono::steady_clock::now();
    MetricsRecord r;
    r.steps = steps;
    r.seed = seed;
    ad::NoGradGuard guard;
    for (size_t i = 0; i < ds.size(); ++i) {
        auto sample = diffusion::ddpm_sample(p, s, ds.lr[i], steps, mix_seed(seed, i), enc);
        const Tensor z0 = codec::encode(ds.hr[i], p.config.patch_size).data;
        r.psnr_db += psnr(sample.image, ds.hr[i]);
        r.ssim += ssim(sample.image, ds.hr[i]);
        r.hist_w1 += hist_w1(sample.z0_hat, z0);
        r.perc_dist += losses::perceptual_loss(ds.hr[i], ad::Var(sample.image), phi).value()[0];
        if (samples) samples->push_back(std::move(sample));
    }
    const double n = static_cast<double>(ds.size());
    r.psnr_db /= n;
    r.ssim /= n;
    r.hist_w1 /= n;
    r.perc_dist /= n;
    r.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

std::vector<MetricsRecord> pd_sweep(const diffusion::DenoiserParams& p, const diffusion::Schedule& s,
                                    const degradation::PairDataset& ds, const std::vector<int>& steps_list,
                                    const std::vector<uint64_t>& seeds, const cond::FeatureEncoder& enc,
                                    const losses::PerceptualExtractor& phi) {
    if (steps_list.empty() || seeds.empty()) throw ValidationError("pd_sweep: steps and seeds must be non-empty");
    std::vector<MetricsRecord> out;
    for (int steps : steps_list)
        for (uint64_t seed : seeds) out.push_back(evaluate(p, s, ds, steps, seed, enc, phi));
    return out;
}

}  // namespace ctxsr::metrics

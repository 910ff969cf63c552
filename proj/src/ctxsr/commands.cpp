#include "ctxsr/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <tuple>

#include "ctxsr/archive.hpp"
#include "ctxsr/codec.hpp"
#include "ctxsr/image_io.hpp"
#include "ctxsr/metrics.hpp"
#include "ctxsr/training.hpp"

namespace ctxsr::cli {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

class Csv {
public:
    Csv(const fs::path& path, const std::string& hash, const std::string& header) : path_(path), out_(path) {
        if (!out_) throw IoError("cannot write " + path.string());
        out_ << "# config_hash=" << hash << "\n";
        out_ << header << "\n";
    }
    void row(const std::vector<std::string>& cells) {
        for (size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
        out_ << "\n";
        if (!out_) throw IoError("write failed: " + path_.string());
    }

private:
    fs::path path_;
    std::ofstream out_;
};

void emit(const Context& ctx, const std::string& line) {
    if (ctx.message) ctx.message(line);
}

degradation::PairDataset load_data(const fs::path& dir, const Context& ctx) {
    auto loaded = degradation::load_pairs(dir);
    for (const auto& w : loaded.warnings) emit(ctx, "warning: " + w);
    if (loaded.dataset.size() == 0) throw ValidationError("no pairs in " + dir.string());
    return std::move(loaded.dataset);
}

void check_scale(const degradation::PairDataset& ds, const RunConfig& cfg, const fs::path& dir) {
    const int sf = cfg.degradation.scale_factor;
    for (size_t i = 0; i < ds.size(); ++i)
        if (ds.hr[i].dim(2) != ds.lr[i].dim(2) * sf || ds.hr[i].dim(3) != ds.lr[i].dim(3) * sf)
            throw DimensionError(dir.string() + ": pair " + std::to_string(i) + " does not match scale_factor " +
                                 std::to_string(sf));
}

double tail_mean(const std::vector<diffusion::LossRecord>& log, size_t window) {
    if (log.empty()) return 0.0;
    const size_t n = std::min(window, log.size());
    double s = 0;
    for (size_t i = log.size() - n; i < log.size(); ++i) s += log[i].loss_total;
    return s / static_cast<double>(n);
}

Tensor flatten(const std::vector<Tensor>& parts) {
    int64_t n = 0;
    for (const auto& t : parts) n += t.numel();
    Tensor out({n});
    int64_t k = 0;
    for (const auto& t : parts)
        for (double v : t.values()) out[k++] = v;
    return out;
}

}  // namespace

fs::path prepare_output(const RunConfig& cfg, const std::string& command, const Context& ctx) {
    const fs::path dir = ctx.out / cfg.run_name / command;
    std::error_code ec;
    if (fs::exists(dir, ec)) {
        if (!ctx.force) throw ExistsError(dir.string() + " already exists (pass --force to replace it)");
        fs::remove_all(dir, ec);
        if (ec) throw IoError("cannot remove " + dir.string() + ": " + ec.message());
    }
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    std::ofstream(dir / "config.json") << cfg.canonical_text() << "\n";
    std::ofstream hash(dir / "config.hash");
    hash << cfg.hash() << "\n";
    if (!hash) throw IoError("cannot write into " + dir.string());
    return dir;
}

fs::path cmd_degrade(const RunConfig& cfg, const Context& ctx) {
    cfg.validate();
    const fs::path dir = prepare_output(cfg, "degrade", ctx);
    const auto ds = degradation::synth_dataset(cfg.dataset.count, cfg.dataset.hr_size, cfg.degradation, cfg.seed,
                                               cfg.model.patch_size);
    degradation::save_pairs(ds, dir);
    emit(ctx, "wrote " + std::to_string(ds.size()) + " pairs to " + dir.string());
    return dir;
}

fs::path cmd_train(const RunConfig& cfg, const fs::path& data_dir, const Context& ctx) {
    cfg.validate();
    const auto ds = load_data(data_dir, ctx);
    check_scale(ds, cfg, data_dir);
    const fs::path dir = prepare_output(cfg, "train", ctx);
    const int every = std::max(1, cfg.train.steps / 20);
    auto result = diffusion::train(ds, cfg, dir / "last_good.ckpt", [&](const diffusion::LossRecord& r) {
        if (r.step % every == 0 || r.step == cfg.train.steps)
            emit(ctx, "step " + std::to_string(r.step) + "/" + std::to_string(cfg.train.steps) +
                          " loss_total=" + fmt(r.loss_total));
    });
    diffusion::save_checkpoint(dir / "model.ckpt", result.params, cfg);
    Csv csv(dir / "losses.csv", cfg.hash(), "step,loss_eps,loss_perceptual,loss_distribution,loss_total");
    for (const auto& r : result.log)
        csv.row({std::to_string(r.step), fmt(r.loss_eps), fmt(r.loss_perceptual), fmt(r.loss_distribution),
                 fmt(r.loss_total)});
    return dir;
}

fs::path cmd_sample(const fs::path& checkpoint, const fs::path& lr_input, int steps, uint64_t seed,
                    const Context& ctx) {
    if (steps < 0) throw ValidationError("sample: steps must be >= 0");
    auto ck = diffusion::load_checkpoint(checkpoint);
    if (steps == 0) steps = ck.config.diffusion.sample_steps;
    std::vector<fs::path> inputs;
    if (fs::is_directory(lr_input)) {
        for (const auto& e : fs::directory_iterator(lr_input))
            if (e.path().extension() == ".ppm") inputs.push_back(e.path());
        std::sort(inputs.begin(), inputs.end());
    } else {
        inputs.push_back(lr_input);
    }
    if (inputs.empty()) throw ValidationError("sample: no .ppm files in " + lr_input.string());
    if (steps > ck.config.diffusion.T) throw ValidationError("sample: steps exceeds T");

    const fs::path dir = prepare_output(ck.config, "sample", ctx);
    const auto sched =
        diffusion::make_schedule(ck.config.diffusion.T, ck.config.diffusion.beta_start, ck.config.diffusion.beta_end);
    const cond::FeatureEncoder enc(ck.config.model.feature_seed, ck.config.model.feature_dim);
    for (size_t i = 0; i < inputs.size(); ++i) {
        const Tensor lr = image_io::read_ppm(inputs[i]);
        auto s = diffusion::ddpm_sample(ck.params, sched, lr, steps, mix_seed(seed, i), enc);
        const std::string stem = inputs[i].stem().string();
        image_io::write_ppm(dir / ("sr_" + stem + ".ppm"), s.image);
        archive::Archive a;
        a.config_hash = ck.config.hash();
        a.encoder_seed = ck.config.model.feature_seed;
        a.config_json = ck.config.canonical_text();
        archive::round_to_f32(s.z0_hat);
        a.tensors.emplace("z0_hat", s.z0_hat);
        archive::save(dir / ("z0_" + stem + ".ckpt"), a);
        emit(ctx, "sampled " + inputs[i].string());
    }
    return dir;
}

fs::path cmd_eval(const fs::path& checkpoint, const fs::path& data_dir, const Context& ctx) {
    auto ck = diffusion::load_checkpoint(checkpoint);
    const RunConfig& cfg = ck.config;
    const auto ds = load_data(data_dir, ctx);
    check_scale(ds, cfg, data_dir);
    const fs::path dir = prepare_output(cfg, "eval", ctx);

    const auto sched = diffusion::make_schedule(cfg.diffusion.T, cfg.diffusion.beta_start, cfg.diffusion.beta_end);
    const cond::FeatureEncoder enc(cfg.model.feature_seed, cfg.model.feature_dim);
    const losses::PerceptualExtractor phi(cfg.losses.perceptual_seed, cfg.losses.tap_level);
    std::vector<diffusion::SampleResult> samples;
    const auto mean = metrics::evaluate(ck.params, sched, ds, cfg.diffusion.sample_steps, cfg.seed, enc, phi, &samples);

    Csv table(dir / "metrics.csv", cfg.hash(), "pair,psnr_db,ssim,hist_w1,perc_dist,bicubic_psnr_db");
    std::vector<Tensor> z0s, z0hats;
    double bicubic_mean = 0;
    for (size_t i = 0; i < ds.size(); ++i) {
        const Tensor z0 = codec::encode(ds.hr[i], cfg.model.patch_size).data;
        const Tensor& img = samples[i].image;
        const double bic = metrics::psnr(metrics::bicubic_upsample(ds.lr[i], cfg.degradation.scale_factor), ds.hr[i]);
        bicubic_mean += bic;
        ad::NoGradGuard guard;
        table.row({std::to_string(i), fmt(metrics::psnr(img, ds.hr[i])), fmt(metrics::ssim(img, ds.hr[i])),
                   fmt(metrics::hist_w1(samples[i].z0_hat, z0)),
                   fmt(losses::perceptual_loss(ds.hr[i], ad::Var(img), phi).value()[0]), fmt(bic)});
        z0s.push_back(z0);
        z0hats.push_back(samples[i].z0_hat);
    }
    bicubic_mean /= static_cast<double>(ds.size());
    table.row({"mean", fmt(mean.psnr_db), fmt(mean.ssim), fmt(mean.hist_w1), fmt(mean.perc_dist), fmt(bicubic_mean)});

    const auto report = metrics::latent_hist_report(flatten(z0s), flatten(z0hats), cfg.metrics.hist_bins);
    Csv hist(dir / "latent_hist.csv", cfg.hash(), "bin_lo,bin_hi,density_a,density_b");
    for (size_t b = 0; b < report.density_a.size(); ++b)
        hist.row({fmt(report.edges[b]), fmt(report.edges[b + 1]), fmt(report.density_a[b]), fmt(report.density_b[b])});
    emit(ctx, "psnr_db=" + fmt(mean.psnr_db) + " ssim=" + fmt(mean.ssim) + " hist_w1=" + fmt(report.w1) +
                  " binned_w1=" + fmt(report.binned_w1));
    return dir;
}

fs::path cmd_sweep(const fs::path& checkpoint, const fs::path& data_dir, const std::vector<int>& steps_list,
                   const std::vector<uint64_t>& seeds, const Context& ctx) {
    auto ck = diffusion::load_checkpoint(checkpoint);
    const RunConfig& cfg = ck.config;
    for (int s : steps_list)
        if (s < 1 || s > cfg.diffusion.T) throw ValidationError("sweep: steps must lie in [1, T]");
    const auto ds = load_data(data_dir, ctx);
    check_scale(ds, cfg, data_dir);
    const fs::path dir = prepare_output(cfg, "sweep", ctx);

    const auto sched = diffusion::make_schedule(cfg.diffusion.T, cfg.diffusion.beta_start, cfg.diffusion.beta_end);
    const cond::FeatureEncoder enc(cfg.model.feature_seed, cfg.model.feature_dim);
    const losses::PerceptualExtractor phi(cfg.losses.perceptual_seed, cfg.losses.tap_level);
    const auto records = metrics::pd_sweep(ck.params, sched, ds, steps_list, seeds, enc, phi);
    Csv csv(dir / "sweep.csv", cfg.hash(), "steps,seed,psnr_db,perc_dist");
    for (const auto& r : records) {
        csv.row({std::to_string(r.steps), std::to_string(r.seed), fmt(r.psnr_db), fmt(r.perc_dist)});
        emit(ctx, "steps=" + std::to_string(r.steps) + " seed=" + std::to_string(r.seed) + " psnr_db=" +
                      fmt(r.psnr_db) + " perc_dist(surrogate-LPIPS)=" + fmt(r.perc_dist));
    }
    return dir;
}

std::vector<AblationCell> ablation_grid(const losses::LossWeights& w) {
    using lgcaa::Variant;
    return {
        {"No LGCAA", Variant::Plain, w.lambda_l, w.lambda_w},
        {"Local", Variant::LocalOnly, w.lambda_l, w.lambda_w},
        {"Global", Variant::GlobalOnly, w.lambda_l, w.lambda_w},
        {"L+G w/o norm", Variant::NoFinalNorm, w.lambda_l, w.lambda_w},
        {"LGCAA", Variant::Full, w.lambda_l, w.lambda_w},
        {"No DPACM", Variant::Full, 0.0, 0.0},
        {"Perceptual", Variant::Full, w.lambda_l, 0.0},
        {"Wasserstein", Variant::Full, 0.0, w.lambda_w},
        {"DPACM", Variant::Full, w.lambda_l, w.lambda_w},
    };
}

int ablation_steps(const RunConfig& cfg) {
    return std::max(1, static_cast<int>(std::lround(cfg.train.steps * cfg.train.ablation_fraction)));
}

fs::path cmd_ablate(const RunConfig& cfg, const fs::path& data_dir, const Context& ctx) {
    cfg.validate();
    const auto ds = load_data(data_dir, ctx);
    check_scale(ds, cfg, data_dir);
    const fs::path dir = prepare_output(cfg, "ablate", ctx);
    const int budget = ablation_steps(cfg);

    const auto sched = diffusion::make_schedule(cfg.diffusion.T, cfg.diffusion.beta_start, cfg.diffusion.beta_end);
    const cond::FeatureEncoder enc(cfg.model.feature_seed, cfg.model.feature_dim);
    const losses::PerceptualExtractor phi(cfg.losses.perceptual_seed, cfg.losses.tap_level);

    struct Outcome {
        double final_loss;
        metrics::MetricsRecord m;
    };
    std::map<std::tuple<int, double, double>, Outcome> done;
    Csv csv(dir / "ablation.csv", cfg.hash(),
            "variant,attention,lambda_l,lambda_w,steps,final_loss,psnr_db,ssim,hist_w1,perc_dist");
    for (const auto& cell : ablation_grid(cfg.losses.weights)) {
        const auto key = std::make_tuple(static_cast<int>(cell.variant), cell.lambda_l, cell.lambda_w);
        auto it = done.find(key);
        if (it == done.end()) {
            RunConfig c = cfg;
            c.attention.variant = cell.variant;
            c.losses.weights.lambda_l = cell.lambda_l;
            c.losses.weights.lambda_w = cell.lambda_w;
            c.train.steps = budget;
            emit(ctx, "training cell '" + cell.label + "' for " + std::to_string(budget) + " steps");
            auto result = diffusion::train(ds, c, {});
            Outcome o{tail_mean(result.log, 50),
                      metrics::evaluate(result.params, sched, ds, c.diffusion.sample_steps, c.seed, enc, phi)};
            it = done.emplace(key, o).first;
        }
        const auto& o = it->second;
        csv.row({cell.label, lgcaa::to_string(cell.variant), fmt(cell.lambda_l), fmt(cell.lambda_w),
                 std::to_string(budget), fmt(o.final_loss), fmt(o.m.psnr_db), fmt(o.m.ssim), fmt(o.m.hist_w1),
                 fmt(o.m.perc_dist)});
    }
    return dir;
}

std::vector<gradcheck::GradReport> cmd_gradcheck(double tol, int seeds, double h) {
    if (seeds < 1) throw ValidationError("gradcheck: seeds must be >= 1");
    std::vector<gradcheck::GradReport> out;
    for (const auto& op : gradcheck::registered_ops()) {
        // Report the worst seed per op.
        gradcheck::GradReport worst;
        for (int s = 1; s <= seeds; ++s) {
            auto r = gradcheck::check_op(op, tol, static_cast<uint64_t>(s), h);
            if (s == 1 || r.max_rel_err > worst.max_rel_err) worst = r;
        }
        out.push_back(worst);
    }
    return out;
}

}  // namespace ctxsr::cli

#include "ctxsr/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctxsr/archive.hpp"
#include "ctxsr/codec.hpp"
#include "ctxsr/error.hpp"
#include "ctxsr/losses.hpp"

namespace ctxsr::diffusion {

DenoiserConfig denoiser_config(const RunConfig& cfg) {
    DenoiserConfig d;
    d.latent_channels = cfg.latent_channels();
    d.width = cfg.model.width;
    d.time_dim = cfg.model.time_dim;
    d.feature_dim = cfg.model.feature_dim;
    d.scale_factor = cfg.degradation.scale_factor;
    d.patch_size = cfg.model.patch_size;
    d.embed_hidden = cfg.model.embed_hidden;
    d.attention = cfg.attention;
    return d;
}

Tensor stack_batch(const std::vector<const Tensor*>& items) {
    if (items.empty()) throw DimensionError("stack_batch: no items");
    Shape s = items[0]->shape();
    const int64_t per = items[0]->numel();
    s[0] = 0;
    for (const Tensor* t : items) {
        if (t->rank() != s.size() || t->dim(0) != 1 || t->numel() != per)
            throw DimensionError("stack_batch: item " + shape_str(t->shape()) + " does not match " +
                                 shape_str(items[0]->shape()));
        ++s[0];
    }
    Tensor out(s);
    for (size_t i = 0; i < items.size(); ++i)
        std::copy(items[i]->data(), items[i]->data() + per, out.data() + static_cast<int64_t>(i) * per);
    return out;
}

Tensor condition_features(const Tensor& lr, int scale_factor, const cond::FeatureEncoder& enc) {
    ad::NoGradGuard guard;
    return enc(ad::upsample_nearest(Var(lr), scale_factor).value());
}

namespace {

struct Adam {
    Adam(double lr, double b1, double b2) : lr(lr), b1(b1), b2(b2) {}

    double lr, b1, b2, eps = 1e-8;
    double grad_scale = 1.0;  // reset after each step
    int64_t t = 0;
    std::vector<Tensor> m, v;

    void step(std::vector<Var*>& params) {
        if (m.empty())
            for (Var* p : params) {
                m.emplace_back(p->shape());
                v.emplace_back(p->shape());
            }
        ++t;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t)), c2 = 1.0 - std::pow(b2, static_cast<double>(t));
        for (size_t i = 0; i < params.size(); ++i) {
            const Tensor g = params[i]->grad();
            Tensor& w = params[i]->mutable_value();
            for (int64_t k = 0; k < w.numel(); ++k) {
                const double gk = g[k] * grad_scale;
                m[i][k] = b1 * m[i][k] + (1 - b1) * gk;
                v[i][k] = b2 * v[i][k] + (1 - b2) * gk * gk;
                const double upd = lr * (m[i][k] / c1) / (std::sqrt(v[i][k] / c2) + eps);
                w[k] = static_cast<double>(static_cast<float>(w[k] - upd));
            }
            params[i]->zero_grad();
        }
        grad_scale = 1.0;
    }
};

}  // namespace

TrainResult train(const degradation::PairDataset& ds, const RunConfig& cfg, const std::filesystem::path& last_good,
                  const ProgressFn& progress) {
    if (ds.size() == 0) throw ValidationError("train: dataset is empty");
    cfg.validate();
    const int sf = cfg.degradation.scale_factor, ps = cfg.model.patch_size;
    if (ds.hr[0].dim(2) != ds.lr[0].dim(2) * sf)
        throw DimensionError("train: dataset scale does not match configured scale_factor " + std::to_string(sf));

    TrainResult result{DenoiserParams::init(denoiser_config(cfg), cfg.seed), {}};
    DenoiserParams& params = result.params;
    apply_freeze(params, cfg.train.freeze_non_attention);
    std::vector<Var*> trainable;
    params.visit([&](const std::string&, Var& v) {
        if (v.requires_grad()) trainable.push_back(&v);
    });

    const Schedule sched = make_schedule(cfg.diffusion.T, cfg.diffusion.beta_start, cfg.diffusion.beta_end);
    const cond::FeatureEncoder enc(cfg.model.feature_seed, cfg.model.feature_dim);
    const losses::PerceptualExtractor phi(cfg.losses.perceptual_seed, cfg.losses.tap_level);

    // Frozen features and latents are fixed per pair; compute once.
    std::vector<Tensor> feats, latents;
    for (size_t i = 0; i < ds.size(); ++i) {
        feats.push_back(condition_features(ds.lr[i], sf, enc));
        latents.push_back(codec::encode(ds.hr[i], ps).data);
    }

    Rng order_rng(mix_seed(cfg.seed, 0x0de7)), noise_rng(mix_seed(cfg.seed, 0x7015e));
    std::vector<size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    size_t cursor = order.size();
    std::uniform_int_distribution<int> t_dist(1, cfg.diffusion.T);
    Adam opt(cfg.train.lr, cfg.train.beta1, cfg.train.beta2);
    std::vector<Tensor> snapshot;

    auto fail = [&](int step, const std::string& what) {
        if (!snapshot.empty())
            for (size_t i = 0; i < trainable.size(); ++i) trainable[i]->mutable_value() = snapshot[i];
        if (!last_good.empty()) save_checkpoint(last_good, params, cfg);
        throw NumericError("train", what + " at step " + std::to_string(step));
    };

    for (int step = 1; step <= cfg.train.steps; ++step) {
        std::vector<const Tensor *> xs, ys, zs, cs;
        for (int b = 0; b < cfg.train.batch; ++b) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), order_rng);
                cursor = 0;
            }
            const size_t i = order[cursor++];
            xs.push_back(&ds.hr[i]);
            ys.push_back(&ds.lr[i]);
            zs.push_back(&latents[i]);
            cs.push_back(&feats[i]);
        }
        const Tensor X = stack_batch(xs), Y = stack_batch(ys), Z0 = stack_batch(zs);
        Tensor c_d({static_cast<int64_t>(cs.size()), cs[0]->dim(1), cs[0]->dim(2)});
        for (size_t b = 0; b < cs.size(); ++b)
            std::copy(cs[b]->data(), cs[b]->data() + cs[b]->numel(), c_d.data() + static_cast<int64_t>(b) * cs[b]->numel());

        std::vector<int> t(static_cast<size_t>(cfg.train.batch));
        for (int& ti : t) ti = t_dist(noise_rng);
        const Tensor eps = randn(Z0.shape(), noise_rng);
        const Var z_t(forward_noise(Z0, t, eps, sched));

        LossRecord rec;
        rec.step = step;
        Var total;
        try {
            Var c_f = cond::embed_condition(Var(Y), params.embed);
            Var eps_hat = denoiser_forward(z_t, t, c_d, c_f, params, true);
            Var x_rgb = cond::cond_to_rgb(c_f, params.to_rgb);
            Var l_eps = losses::denoising_loss(eps_hat, Var(eps));
            Var l_perc = losses::perceptual_loss(X, x_rgb, phi);
            Var l_dist = losses::distribution_loss(X, x_rgb);
            total = losses::total_loss(l_eps, l_perc, l_dist, cfg.losses.weights);
            rec.loss_eps = l_eps.value()[0];
            rec.loss_perceptual = l_perc.value()[0];
            rec.loss_distribution = l_dist.value()[0];
            rec.loss_total = total.value()[0];
        } catch (const NumericError& e) {
            fail(step, e.what());
        }
        if (!std::isfinite(rec.loss_total)) fail(step, "non-finite total loss");

        ad::backward(total);
        for (Var* p : trainable)
            if (!p->grad().all_finite()) fail(step, "non-finite gradient");

        if (cfg.train.grad_clip > 0) {
            double sq = 0;
            for (Var* p : trainable) {
                const Tensor g = p->grad();
                for (double x : g.values()) sq += x * x;
            }
            const double norm = std::sqrt(sq);
            if (norm > cfg.train.grad_clip) opt.grad_scale = cfg.train.grad_clip / norm;
        }

        snapshot.clear();
        for (Var* p : trainable) snapshot.push_back(p->value());
        opt.step(trainable);

        result.log.push_back(rec);
        if (progress) progress(rec);
    }
    return result;
}

void save_checkpoint(const std::filesystem::path& path, DenoiserParams& params, const RunConfig& cfg) {
    archive::Archive a;
    a.config_hash = cfg.hash();
    a.encoder_seed = cfg.model.feature_seed;
    a.config_json = cfg.canonical_text();
    params.visit([&](const std::string& name, Var& v) { a.tensors.emplace(name, v.value()); });
    archive::save(path, a);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    archive::Archive a = archive::load(path);
    RunConfig cfg;
    try {
        cfg = RunConfig::parse(a.config_json);
    } catch (const ValidationError& e) {
        throw FormatError(path.string() + ": embedded config invalid: " + e.what());
    }
    if (cfg.hash() != a.config_hash) throw FormatError(path.string() + ": config hash mismatch");
    if (cfg.model.feature_seed != a.encoder_seed) throw FormatError(path.string() + ": encoder seed mismatch");
    Checkpoint ck{cfg, DenoiserParams::init(denoiser_config(cfg), cfg.seed)};
    size_t seen = 0;
    ck.params.visit([&](const std::string& name, Var& v) {
        auto it = a.tensors.find(name);
        if (it == a.tensors.end()) throw FormatError(path.string() + ": missing tensor '" + name + "'");
        if (it->second.shape() != v.shape())
            throw FormatError(path.string() + ": tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                              ", expected " + shape_str(v.shape()));
        v.mutable_value() = it->second;
        ++seen;
    });
    if (seen != a.tensors.size()) throw FormatError(path.string() + ": unexpected extra tensors");
    apply_freeze(ck.params, cfg.train.freeze_non_attention);
    return ck;
}

SampleResult ddpm_sample(const DenoiserParams& p, const Schedule& s, const Tensor& lr, int steps, uint64_t seed,
                         const cond::FeatureEncoder& enc) {
    require_rank(lr, 4, "ddpm_sample");
    const auto& cfg = p.config;
    const std::vector<int> ts = strided_timesteps(s.T, steps);
    ad::NoGradGuard guard;
    const Tensor c_d = condition_features(lr, cfg.scale_factor, enc);
    const Var c_f = cond::embed_condition(Var(lr), p.embed);
    const int64_t B = lr.dim(0);

    Rng rng(mix_seed(seed, 0x5a3e));
    Tensor z = randn(c_f.shape(), rng);
    for (int k = steps - 1; k >= 0; --k) {
        const int t = ts[static_cast<size_t>(k)], prev = k > 0 ? ts[static_cast<size_t>(k - 1)] : 0;
        const Tensor eps_hat =
            denoiser_forward(Var(z), std::vector<int>(static_cast<size_t>(B), t), c_d, c_f, p, true).value();
        const double ab = s.alpha_bar(t), abp = s.alpha_bar(prev);
        Tensor x0(z.shape());
        for (int64_t i = 0; i < z.numel(); ++i)
            x0[i] = std::clamp((z[i] - std::sqrt(1.0 - ab) * eps_hat[i]) / std::sqrt(ab), -1.0, 1.0);
        if (prev == 0) {
            z = std::move(x0);
            break;
        }
        const double beta = 1.0 - ab / abp;
        const double c0 = std::sqrt(abp) * beta / (1.0 - ab), ct = std::sqrt(ab / abp) * (1.0 - abp) / (1.0 - ab);
        const double sigma = std::sqrt(beta * (1.0 - abp) / (1.0 - ab));
        const Tensor noise = randn(z.shape(), rng);
        for (int64_t i = 0; i < z.numel(); ++i) z[i] = c0 * x0[i] + ct * z[i] + sigma * noise[i];
    }
    if (!z.all_finite()) throw NumericError("ddpm_sample", "non-finite latent");
    SampleResult r;
    r.image = codec::decode({z, cfg.patch_size}, true);
    r.z0_hat = std::move(z);
    return r;
}

}  // namespace ctxsr::diffusion

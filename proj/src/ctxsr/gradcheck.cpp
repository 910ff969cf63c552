#include "ctxsr/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <utility>

#include "ctxsr/conditioning.hpp"
#include "ctxsr/diffusion.hpp"
#include "ctxsr/error.hpp"
#include "ctxsr/lgcaa.hpp"
#include "ctxsr/losses.hpp"

namespace ctxsr::gradcheck {

using ad::Var;

Tensor finite_diff(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    if (!(h > 0)) throw ValidationError("finite_diff: h must be > 0");
    Tensor g(x.shape()), probe = x;
    for (int64_t i = 0; i < x.numel(); ++i) {
        probe[i] = x[i] + h;
        const double fp = f(probe);
        probe[i] = x[i] - h;
        const double fm = f(probe);
        probe[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("finite_diff", "non-finite f at x " + std::string(std::isfinite(fp) ? "-" : "+") +
                                                  " h·e_" + std::to_string(i));
        g[i] = (fp - fm) / (2 * h);
    }
    return g;
}

namespace {

// An op output as a function of named leaf tensors, reduced to a scalar by
// a fixed random projection.
struct Problem {
    std::vector<std::pair<std::string, Var>> leaves;
    std::function<Var()> output;
    int64_t coord_cap = 0;  // per-tensor cap on compared coordinates (0: all)
};

Var leaf(Tensor t) { return Var(std::move(t), true); }

// Fan-in scaled weights; gains near 1; small nonzero biases. Zero-initialized
// tensors become generic.
Var randomized(const std::string& name, const Var& v, Rng& rng) {
    const Shape& s = v.shape();
    if (s.size() >= 2) {
        const double fan_in = static_cast<double>(v.value().numel() / s[0]);
        return leaf(randn(s, rng, 1.0 / std::sqrt(fan_in)));
    }
    Tensor t = randn(s, rng, 0.2);
    if (name.size() >= 5 && name.compare(name.size() - 5, 5, ".gain") == 0)
        for (double& x : t.values()) x += 1.0;
    return leaf(std::move(t));
}

template <class P>
void add_params(Problem& pb, P& params, const std::string& prefix, Rng& rng) {
    params.visit(prefix, [&](const std::string& name, Var& v) {
        v = randomized(name, v, rng);
        pb.leaves.emplace_back(name, v);
    });
}

lgcaa::AttentionConfig mini_attention(int heads) {
    lgcaa::AttentionConfig cfg;
    cfg.num_heads = heads;
    return cfg;
}

Problem make_lgcaa(Rng& rng) {
    Problem pb;
    auto cfg = std::make_shared<lgcaa::AttentionConfig>(mini_attention(2));
    cfg->global_embed_dim = 6;
    auto p = std::make_shared<lgcaa::AttentionParams>(lgcaa::AttentionParams::init(4, *cfg, rng));
    Var s = leaf(randn({1, 4, 3, 3}, rng));
    pb.leaves.emplace_back("s", s);
    add_params(pb, *p, "attn", rng);
    pb.output = [=] { return lgcaa::lgcaa_forward(s, *p, *cfg); };
    return pb;
}

Problem make_local(Rng& rng) {
    Problem pb;
    Var q = leaf(randn({1, 1, 3, 2}, rng)), k = leaf(randn({1, 1, 3, 2}, rng)), v = leaf(randn({1, 1, 3, 2}, rng));
    pb.leaves = {{"q", q}, {"k", k}, {"v", v}};
    pb.output = [=] { return lgcaa::local_attention(q, k, v, 1e-6); };
    return pb;
}

Problem make_global(Rng& rng) {
    Problem pb;
    auto cfg = std::make_shared<lgcaa::AttentionConfig>(mini_attention(2));
    auto p = std::make_shared<lgcaa::AttentionParams>(lgcaa::AttentionParams::init(4, *cfg, rng));
    Var x = leaf(randn({1, 5, 4}, rng));
    pb.leaves.emplace_back("tokens", x);
    // Only the GA sub-layers take part.
    for (auto* l : {&p->ga_proj_in, &p->ga_qkv, &p->ga_out, &p->ga_proj_back}) {
        l->weight = randomized("weight", l->weight, rng);
        l->bias = randomized("bias", l->bias, rng);
    }
    p->ga_norm.gain = randomized(".gain", p->ga_norm.gain, rng);
    p->ga_norm.bias = randomized("bias", p->ga_norm.bias, rng);
    pb.leaves.insert(pb.leaves.end(), {{"ga_proj_in.weight", p->ga_proj_in.weight},
                                       {"ga_proj_in.bias", p->ga_proj_in.bias},
                                       {"ga_norm.gain", p->ga_norm.gain},
                                       {"ga_norm.bias", p->ga_norm.bias},
                                       {"ga_qkv.weight", p->ga_qkv.weight},
                                       {"ga_qkv.bias", p->ga_qkv.bias},
                                       {"ga_out.weight", p->ga_out.weight},
                                       {"ga_out.bias", p->ga_out.bias},
                                       {"ga_proj_back.weight", p->ga_proj_back.weight},
                                       {"ga_proj_back.bias", p->ga_proj_back.bias}});
    pb.output = [=] { return lgcaa::global_attention(x, *p, *cfg); };
    return pb;
}

Problem make_embed(Rng& rng) {
    Problem pb;
    auto p = std::make_shared<cond::EmbedderParams>(cond::EmbedderParams::init({2, 2, 4, 12}, rng));
    Var y = leaf(rand_uniform({1, 3, 2, 2}, rng, 0, 1));
    pb.leaves.emplace_back("lr", y);
    add_params(pb, *p, "embed", rng);
    pb.output = [=] { return cond::embed_condition(y, *p); };
    return pb;
}

Problem make_to_rgb(Rng& rng) {
    Problem pb;
    auto p = std::make_shared<cond::ToRgbParams>(cond::ToRgbParams::init(12, 2, rng));
    Var c = leaf(randn({1, 12, 2, 2}, rng));
    pb.leaves.emplace_back("c_f", c);
    add_params(pb, *p, "to_rgb", rng);
    pb.output = [=] { return cond::cond_to_rgb(c, *p); };
    return pb;
}

Problem make_perceptual(Rng& rng) {
    Problem pb;
    auto phi = std::make_shared<losses::PerceptualExtractor>(rng(), 2);
    auto x = std::make_shared<Tensor>(rand_uniform({1, 3, 4, 4}, rng, 0, 1));
    Var x_rgb = leaf(rand_uniform({1, 3, 4, 4}, rng, 0, 1));
    pb.leaves.emplace_back("x_rgb", x_rgb);
    pb.output = [=] { return losses::perceptual_loss(*x, x_rgb, *phi); };
    return pb;
}

Problem make_distribution(Rng& rng) {
    Problem pb;
    auto x = std::make_shared<Tensor>(rand_uniform({1, 3, 4, 4}, rng, 0, 1));
    Var x_rgb = leaf(rand_uniform({1, 3, 4, 4}, rng, 0, 1));
    pb.leaves.emplace_back("x_rgb", x_rgb);
    pb.output = [=] { return losses::distribution_loss(*x, x_rgb); };
    return pb;
}

Problem make_denoiser(Rng& rng) {
    Problem pb;
    diffusion::DenoiserConfig cfg;
    cfg.latent_channels = 12;
    cfg.width = 4;
    cfg.time_dim = 4;
    cfg.feature_dim = 4;
    cfg.scale_factor = 2;
    cfg.patch_size = 2;
    cfg.embed_hidden = 4;
    cfg.attention = mini_attention(1);
    auto p = std::make_shared<diffusion::DenoiserParams>(diffusion::DenoiserParams::init(cfg, rng()));
    Var z = leaf(randn({1, 12, 4, 4}, rng));
    Var lr = leaf(rand_uniform({1, 3, 4, 4}, rng, 0, 1));
    pb.leaves = {{"z_t", z}, {"lr", lr}};
    p->visit([&](const std::string& name, Var& v) {
        v = randomized(name, v, rng);
        pb.leaves.emplace_back(name, v);
    });
    pb.coord_cap = 32;
    auto c_d = std::make_shared<Tensor>(randn({1, 2, 4}, rng));
    const std::vector<int> t{37};
    pb.output = [=] {
        Var c_f = cond::embed_condition(lr, p->embed);
        return diffusion::denoiser_forward(z, t, *c_d, c_f, *p, true);
    };
    return pb;
}

using Factory = Problem (*)(Rng&);

const std::vector<std::pair<std::string, Factory>>& registry() {
    static const std::vector<std::pair<std::string, Factory>> r = {
        {"lgcaa_forward", make_lgcaa},         {"local_attention", make_local},
        {"global_attention", make_global},     {"embed_condition", make_embed},
        {"cond_to_rgb", make_to_rgb},          {"perceptual_loss", make_perceptual},
        {"distribution_loss", make_distribution}, {"denoiser_forward", make_denoiser},
    };
    return r;
}

}  // namespace

const std::vector<std::string>& registered_ops() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n;
        for (auto& [name, f] : registry()) n.push_back(name);
        return n;
    }();
    return names;
}

GradReport check_op(const std::string& op_name, double tol, uint64_t seed, double h) {
    Factory factory = nullptr;
    for (auto& [name, f] : registry())
        if (name == op_name) factory = f;
    if (!factory) {
        std::string list;
        for (auto& n : registered_ops()) list += (list.empty() ? "" : ", ") + n;
        throw ValidationError("unknown op '" + op_name + "'; registered ops: " + list);
    }

    GradReport r;
    r.op_name = op_name;
    r.tolerance = tol;
    constexpr int kMaxDraws = 50;
    Problem pb;
    Tensor weights;
    for (int draw = 0;; ++draw) {
        if (draw == kMaxDraws) throw NumericError("check_op", op_name + ": every draw sat within 10h of a kink");
        Rng rng(mix_seed(seed, static_cast<uint64_t>(draw)));
        pb = factory(rng);
        ad::KinkMonitor monitor;
        Var out = pb.output();
        if (monitor.min_margin() < 10 * h) {
            ++r.resamples;
            continue;
        }
        // Projection scaled so the reduced scalar is small; this keeps the
        // rounding noise of the differences far below the 1e-8 floor.
        weights = randn(out.shape(), rng);
        double mass = 0;
        for (int64_t i = 0; i < out.value().numel(); ++i) mass += std::abs(weights[i] * out.value()[i]);
        const double scale = 1e-3 / std::max(mass, 1e-12);
        for (double& w : weights.values()) w *= scale;
        ad::backward(ad::weighted_sum(out, weights));
        break;
    }
    auto scalar = [&] {
        const Var out = pb.output();
        const Tensor& o = out.value();
        double acc = 0;
        for (int64_t i = 0; i < o.numel(); ++i) acc += weights[i] * o[i];
        return acc;
    };

    ad::NoGradGuard guard;
    Rng pick(mix_seed(seed, 0x91c4));
    for (auto& [name, v] : pb.leaves) {
        const Tensor analytic = v.grad();
        const Tensor base = v.value();
        std::vector<int64_t> coords(static_cast<size_t>(base.numel()));
        for (int64_t i = 0; i < base.numel(); ++i) coords[static_cast<size_t>(i)] = i;
        if (pb.coord_cap > 0 && base.numel() > pb.coord_cap) {
            for (int64_t i = 0; i < pb.coord_cap; ++i) {
                const int64_t j = i + static_cast<int64_t>(pick() % static_cast<uint64_t>(base.numel() - i));
                std::swap(coords[static_cast<size_t>(i)], coords[static_cast<size_t>(j)]);
            }
            coords.resize(static_cast<size_t>(pb.coord_cap));
        }
        Tensor& x = v.mutable_value();
        for (int64_t i : coords) {
            x[i] = base[i] + h;
            const double fp = scalar();
            x[i] = base[i] - h;
            const double fm = scalar();
            x[i] = base[i];
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("check_op", op_name + ": non-finite output at " + name + "[" + std::to_string(i) + "]");
            const double a = analytic[i], n = (fp - fm) / (2 * h);
            const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
            if (rel > r.max_rel_err || r.worst_index.empty()) {
                r.max_rel_err = rel;
                r.worst_index = name + "[" + std::to_string(i) + "]";
            }
            ++r.coordinates;
        }
    }
    r.passed = r.max_rel_err < tol;
    return r;
}

std::string format_report(const GradReport& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%-18s %s max_rel_err=%.3e tol=%.1e worst=%s coords=%lld resamples=%d",
                  r.op_name.c_str(), r.passed ? "PASS" : "FAIL", r.max_rel_err, r.tolerance, r.worst_index.c_str(),
                  static_cast<long long>(r.coordinates), r.resamples);
    return buf;
}

}  // namespace ctxsr::gradcheck

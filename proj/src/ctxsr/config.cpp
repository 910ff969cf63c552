#include "ctxsr/config.hpp"

#include <fstream>
#include <json.hpp>
#include <algorithm>
#include <sstream>

#include "ctxsr/hash.hpp"

namespace ctxsr {

using nlohmann::json;

namespace {

// 1-based line of the first occurrence of "key" in the raw text.
int line_of(const std::string& text, const std::string& key) {
    const auto pos = text.find("\"" + key + "\"");
    if (pos == std::string::npos) return 0;
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

class Section {
public:
    Section(const json& j, std::string name, const std::string& text) : j_(j), name_(std::move(name)), text_(text) {
        if (!j_.is_object()) throw ConfigError(line_of(text_, name_), "'" + name_ + "' must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        known_.push_back(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const json::exception&) {
            throw ConfigError(line_of(text_, key), "bad value for '" + name_ + "." + key + "'");
        }
    }

    // Errors on keys that no get() call claimed.
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (std::find(known_.begin(), known_.end(), it.key()) == known_.end())
                throw ConfigError(line_of(text_, it.key()), "unknown key '" + name_ + "." + it.key() + "'");
    }

    void claim(const char* key) { known_.push_back(key); }
    int line(const char* key) const { return line_of(text_, key); }

private:
    const json& j_;
    std::string name_;
    const std::string& text_;
    std::vector<std::string> known_;
};

json to_json(const RunConfig& c) {
    json stages = json::array();
    for (auto s : c.degradation.stage_order) stages.push_back(degradation::to_string(s));
    return {
        {"run_name", c.run_name},
        {"seed", c.seed},
        {"degradation",
         {{"blur_sigma", c.degradation.blur_sigma},
          {"blur_kernel", c.degradation.blur_kernel},
          {"blur_kind", c.degradation.blur_kind == degradation::BlurKind::Box ? "box" : "gaussian"},
          {"scale_factor", c.degradation.scale_factor},
          {"noise_sigma", c.degradation.noise_sigma},
          {"stage_order", stages}}},
        {"dataset", {{"count", c.dataset.count}, {"hr_size", c.dataset.hr_size}}},
        {"attention",
         {{"num_heads", c.attention.num_heads},
          {"eps", c.attention.eps},
          {"clamp_lo", c.attention.clamp_lo},
          {"clamp_hi", c.attention.clamp_hi},
          {"local_mode", lgcaa::to_string(c.attention.local_mode)},
          {"window", c.attention.window},
          {"global_embed_dim", c.attention.global_embed_dim},
          {"variant", lgcaa::to_string(c.attention.variant)}}},
        {"model",
         {{"width", c.model.width},
          {"time_dim", c.model.time_dim},
          {"feature_dim", c.model.feature_dim},
          {"feature_seed", c.model.feature_seed},
          {"embed_hidden", c.model.embed_hidden},
          {"patch_size", c.model.patch_size}}},
        {"diffusion",
         {{"T", c.diffusion.T},
          {"beta_start", c.diffusion.beta_start},
          {"beta_end", c.diffusion.beta_end},
          {"sample_steps", c.diffusion.sample_steps}}},
        {"train",
         {{"steps", c.train.steps},
          {"batch", c.train.batch},
          {"lr", c.train.lr},
          {"beta1", c.train.beta1},
          {"beta2", c.train.beta2},
          {"grad_clip", c.train.grad_clip},
          {"freeze_non_attention", c.train.freeze_non_attention},
          {"ablation_fraction", c.train.ablation_fraction}}},
        {"losses",
         {{"lambda_l", c.losses.weights.lambda_l},
          {"lambda_w", c.losses.weights.lambda_w},
          {"perceptual_seed", c.losses.perceptual_seed},
          {"tap_level", c.losses.tap_level}}},
        {"metrics",
         {{"hist_bins", c.metrics.hist_bins},
          {"sweep_steps", c.metrics.sweep_steps},
          {"sweep_seeds", c.metrics.sweep_seeds}}},
    };
}

}  // namespace

void RunConfig::validate() const {
    // The key is the first dotted name in the message.
    auto fail = [](const std::string& what) {
        std::string key;
        const auto dot = what.find('.');
        if (dot != std::string::npos && what.find(' ') > dot) key = what.substr(0, what.find_first_of(" /", dot));
        throw ConfigError(0, what, key);
    };
    if (run_name.empty() || run_name.find('/') != std::string::npos) fail("run_name must be a non-empty file name");
    try {
        degradation.validate();
    } catch (const ValidationError& e) {
        fail(std::string("degradation: ") + e.what());
    }
    if (dataset.count < 1) fail("dataset.count must be >= 1");
    if (model.patch_size < 1) fail("model.patch_size must be >= 1");
    if (dataset.hr_size < 8 || dataset.hr_size % degradation.scale_factor || dataset.hr_size % model.patch_size ||
        dataset.hr_size % 8)
        fail("dataset.hr_size must be a multiple of 8, of the scale factor and of the patch size");
    if ((dataset.hr_size / model.patch_size) % 2) fail("latent size must be even (two resolution levels)");
    if (model.width < 1 || model.time_dim < 2 || model.time_dim % 2 || model.feature_dim < 1 || model.embed_hidden < 1)
        fail("model sizes must be positive (time_dim even)");
    try {
        const int64_t lat = dataset.hr_size / model.patch_size;
        attention.validate(model.width, lat, lat);
        attention.validate(2 * model.width, lat / 2, lat / 2);
    } catch (const Error& e) {
        fail(std::string("attention: ") + e.what());
    }
    if (diffusion.T < 1) fail("diffusion.T must be >= 1");
    if (!(diffusion.beta_start > 0 && diffusion.beta_start <= diffusion.beta_end && diffusion.beta_end < 1))
        fail("diffusion betas must satisfy 0 < beta_start <= beta_end < 1");
    if (diffusion.sample_steps < 1 || diffusion.sample_steps > diffusion.T)
        fail("diffusion.sample_steps must lie in [1, T]");
    if (train.steps < 1 || train.batch < 1) fail("train.steps and train.batch must be >= 1");
    if (!(train.lr > 0)) fail("train.lr must be > 0");
    if (!(train.beta1 >= 0 && train.beta1 < 1 && train.beta2 >= 0 && train.beta2 < 1))
        fail("train.beta1/beta2 must lie in [0, 1)");
    if (!(train.grad_clip >= 0)) fail("train.grad_clip must be >= 0");
    if (!(train.ablation_fraction > 0 && train.ablation_fraction <= 1)) fail("train.ablation_fraction must lie in (0, 1]");
    try {
        losses.weights.validate();
    } catch (const ValidationError& e) {
        fail(std::string("losses: ") + e.what());
    }
    if (losses.tap_level < 1 || losses.tap_level > 3) fail("losses.tap_level must be 1, 2 or 3");
    if (metrics.hist_bins < 2) fail("metrics.hist_bins must be >= 2");
    if (metrics.sweep_steps.empty() || metrics.sweep_seeds.empty()) fail("metrics sweep lists must be non-empty");
    for (int s : metrics.sweep_steps)
        if (s < 1 || s > diffusion.T) fail("metrics.sweep_steps entries must lie in [1, T]");
}

std::string RunConfig::canonical_text() const { return to_json(*this).dump(); }

std::string RunConfig::hash() const { return sha256_hex(canonical_text()); }

RunConfig RunConfig::parse(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        // byte offset → line
        const size_t pos = std::min(e.byte, text.size());
        int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
        throw ConfigError(line, std::string("malformed JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError(1, "top level must be an object");
    RunConfig c;
    Section top(root, "config", text);
    top.get("run_name", c.run_name);
    top.get("seed", c.seed);

    auto section = [&](const char* name, auto&& body) {
        auto it = root.find(name);
        top.claim(name);
        if (it == root.end()) return;
        Section s(*it, name, text);
        body(s);
        s.finish();
    };

    section("degradation", [&](Section& s) {
        auto& d = c.degradation;
        s.get("blur_sigma", d.blur_sigma);
        s.get("blur_kernel", d.blur_kernel);
        std::string kind = d.blur_kind == degradation::BlurKind::Box ? "box" : "gaussian";
        s.get("blur_kind", kind);
        if (kind != "box" && kind != "gaussian") throw ConfigError(s.line("blur_kind"), "blur_kind must be gaussian or box");
        d.blur_kind = kind == "box" ? degradation::BlurKind::Box : degradation::BlurKind::Gaussian;
        s.get("scale_factor", d.scale_factor);
        s.get("noise_sigma", d.noise_sigma);
        std::vector<std::string> stages;
        s.get("stage_order", stages);
        if (!stages.empty()) {
            d.stage_order.clear();
            try {
                for (auto& st : stages) d.stage_order.push_back(degradation::stage_from_string(st));
            } catch (const ValidationError& e) {
                throw ConfigError(s.line("stage_order"), e.what());
            }
        }
    });
    section("dataset", [&](Section& s) {
        s.get("count", c.dataset.count);
        s.get("hr_size", c.dataset.hr_size);
    });
    section("attention", [&](Section& s) {
        auto& a = c.attention;
        s.get("num_heads", a.num_heads);
        s.get("eps", a.eps);
        s.get("clamp_lo", a.clamp_lo);
        s.get("clamp_hi", a.clamp_hi);
        std::string mode = lgcaa::to_string(a.local_mode), variant = lgcaa::to_string(a.variant);
        s.get("local_mode", mode);
        s.get("variant", variant);
        try {
            a.local_mode = lgcaa::local_mode_from_string(mode);
            a.variant = lgcaa::variant_from_string(variant);
        } catch (const ValidationError& e) {
            throw ConfigError(s.line("attention"), e.what());
        }
        s.get("window", a.window);
        s.get("global_embed_dim", a.global_embed_dim);
    });
    section("model", [&](Section& s) {
        s.get("width", c.model.width);
        s.get("time_dim", c.model.time_dim);
        s.get("feature_dim", c.model.feature_dim);
        s.get("feature_seed", c.model.feature_seed);
        s.get("embed_hidden", c.model.embed_hidden);
        s.get("patch_size", c.model.patch_size);
    });
    section("diffusion", [&](Section& s) {
        s.get("T", c.diffusion.T);
        s.get("beta_start", c.diffusion.beta_start);
        s.get("beta_end", c.diffusion.beta_end);
        s.get("sample_steps", c.diffusion.sample_steps);
    });
    section("train", [&](Section& s) {
        s.get("steps", c.train.steps);
        s.get("batch", c.train.batch);
        s.get("lr", c.train.lr);
        s.get("beta1", c.train.beta1);
        s.get("beta2", c.train.beta2);
        s.get("grad_clip", c.train.grad_clip);
        s.get("freeze_non_attention", c.train.freeze_non_attention);
        s.get("ablation_fraction", c.train.ablation_fraction);
    });
    section("losses", [&](Section& s) {
        s.get("lambda_l", c.losses.weights.lambda_l);
        s.get("lambda_w", c.losses.weights.lambda_w);
        s.get("perceptual_seed", c.losses.perceptual_seed);
        s.get("tap_level", c.losses.tap_level);
    });
    section("metrics", [&](Section& s) {
        s.get("hist_bins", c.metrics.hist_bins);
        s.get("sweep_steps", c.metrics.sweep_steps);
        s.get("sweep_seeds", c.metrics.sweep_seeds);
    });
    top.finish();
    try {
        c.validate();
    } catch (const ConfigError& e) {
        if (e.key.empty()) throw;
        // locate the field inside its section
        const std::string section = e.key.substr(0, e.key.find('.')), field = e.key.substr(e.key.find('.') + 1);
        const auto at = text.find("\"" + section + "\"");
        int line = 0;
        if (at != std::string::npos) {
            const auto pos = text.find("\"" + field + "\"", at);
            if (pos != std::string::npos)
                line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
        }
        throw ConfigError(line, e.detail, e.key);
    }
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

}  // namespace ctxsr

#include "ctxsr/degradation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>

#include "ctxsr/error.hpp"
#include "ctxsr/hash.hpp"
#include "ctxsr/image_io.hpp"
#include "ctxsr/rng.hpp"

namespace ctxsr::degradation {

using nlohmann::json;

std::string to_string(Stage s) {
    switch (s) {
        case Stage::Blur: return "blur";
        case Stage::Downsample: return "downsample";
        case Stage::Noise: return "noise";
    }
    return "blur";
}

Stage stage_from_string(const std::string& s) {
    if (s == "blur") return Stage::Blur;
    if (s == "downsample") return Stage::Downsample;
    if (s == "noise") return Stage::Noise;
    throw ValidationError("unknown degradation stage '" + s + "' (expected blur, downsample or noise)");
}

void DegradationConfig::validate() const {
    if (!(blur_sigma > 0) || !std::isfinite(blur_sigma)) throw ValidationError("blur_sigma must be > 0");
    if (blur_kind == BlurKind::Gaussian && (blur_kernel < 3 || blur_kernel % 2 == 0))
        throw ValidationError("blur_kernel must be odd and >= 3 for gaussian blur");
    if (blur_kind == BlurKind::Box && blur_kernel < 1) throw ValidationError("blur_kernel must be >= 1 for box blur");
    if (scale_factor < 1) throw ValidationError("scale_factor must be >= 1");
    if (!(noise_sigma >= 0) || !std::isfinite(noise_sigma)) throw ValidationError("noise_sigma must be >= 0");
    std::set<Stage> seen;
    for (Stage s : stage_order)
        if (!seen.insert(s).second) throw ValidationError("stage '" + to_string(s) + "' appears more than once");
}

std::string DegradationConfig::canonical_text() const {
    json stages = json::array();
    for (Stage s : stage_order) stages.push_back(to_string(s));
    json j = {{"blur_sigma", blur_sigma},
              {"blur_kernel", blur_kernel},
              {"blur_kind", blur_kind == BlurKind::Box ? "box" : "gaussian"},
              {"scale_factor", scale_factor},
              {"noise_sigma", noise_sigma},
              {"stage_order", stages},
              {"seed", seed}};
    return j.dump();
}

std::string DegradationConfig::hash() const { return sha256_hex(canonical_text()); }

DegradationConfig DegradationConfig::from_canonical_text(const std::string& text) {
    DegradationConfig c;
    json j = json::parse(text);
    c.blur_sigma = j.at("blur_sigma").get<double>();
    c.blur_kernel = j.at("blur_kernel").get<int>();
    c.blur_kind = j.at("blur_kind").get<std::string>() == "box" ? BlurKind::Box : BlurKind::Gaussian;
    c.scale_factor = j.at("scale_factor").get<int>();
    c.noise_sigma = j.at("noise_sigma").get<double>();
    c.stage_order.clear();
    for (const auto& s : j.at("stage_order")) c.stage_order.push_back(stage_from_string(s.get<std::string>()));
    c.seed = j.at("seed").get<uint64_t>();
    c.validate();
    return c;
}

std::vector<double> gaussian_taps(double sigma, int size) {
    if (size < 1 || size % 2 == 0) throw ValidationError("gaussian kernel size must be odd");
    const int r = size / 2;
    std::vector<double> w(static_cast<size_t>(size));
    double total = 0.0;
    for (int i = -r; i <= r; ++i) {
        w[static_cast<size_t>(i + r)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        total += w[static_cast<size_t>(i + r)];
    }
    for (auto& v : w) v /= total;
    return w;
}

namespace {

// Mirror index into [0, n) without repeating the edge sample.
int64_t reflect(int64_t i, int64_t n) {
    if (n == 1) return 0;
    const int64_t period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

// 1-D filter along rows or columns. Written as x_ref + Σ w_k (x_k − x_ref)
// so that constant inputs come back bit-identical for any tap set.
Tensor filter_axis(const Tensor& img, const std::vector<double>& taps, int64_t origin, bool along_width, int64_t ref) {
    const int64_t B = img.dim(0), C = img.dim(1), H = img.dim(2), W = img.dim(3);
    const int64_t K = static_cast<int64_t>(taps.size());
    Tensor out(img.shape());
    for (int64_t n = 0; n < B; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x) {
                    auto sample = [&](int64_t k) {
                        return along_width ? img.at(n, c, y, reflect(x + k - origin, W))
                                           : img.at(n, c, reflect(y + k - origin, H), x);
                    };
                    const double base = sample(ref);
                    double acc = 0.0;
                    for (int64_t k = 0; k < K; ++k)
                        if (k != ref) acc += taps[static_cast<size_t>(k)] * (sample(k) - base);
                    out.at(n, c, y, x) = base + acc;
                }
    return out;
}

void require_image(const Tensor& img, const char* what) {
    require_rank(img, 4, what);
    if (!img.all_finite()) throw ValidationError(std::string(what) + ": input contains NaN or Inf");
}

}  // namespace

Tensor gaussian_blur(const Tensor& image, double sigma, int size) {
    require_image(image, "gaussian_blur");
    auto taps = gaussian_taps(sigma, size);
    const int64_t r = size / 2;
    return filter_axis(filter_axis(image, taps, r, true, r), taps, r, false, r);
}

Tensor box_blur(const Tensor& image, int size) {
    require_image(image, "box_blur");
    if (size < 1) throw ValidationError("box_blur: size must be >= 1");
    std::vector<double> taps(static_cast<size_t>(size), 1.0 / size);
    return filter_axis(filter_axis(image, taps, 0, true, 0), taps, 0, false, 0);
}

Tensor decimate(const Tensor& image, int factor) {
    require_rank(image, 4, "decimate");
    const int64_t H = image.dim(2), W = image.dim(3);
    if (factor < 1 || H % factor || W % factor)
        throw DimensionError("decimate: image " + shape_str(image.shape()) + " not divisible by scale factor " +
                             std::to_string(factor));
    Tensor out({image.dim(0), image.dim(1), H / factor, W / factor});
    for (int64_t n = 0; n < image.dim(0); ++n)
        for (int64_t c = 0; c < image.dim(1); ++c)
            for (int64_t y = 0; y < H / factor; ++y)
                for (int64_t x = 0; x < W / factor; ++x) out.at(n, c, y, x) = image.at(n, c, y * factor, x * factor);
    return out;
}

Tensor add_noise(const Tensor& image, double sigma, uint64_t seed) {
    Tensor out = image;
    if (sigma == 0.0) return out;
    Rng rng(seed);
    std::normal_distribution<double> dist(0.0, sigma);
    for (auto& v : out.values()) v += dist(rng);
    return out;
}

Tensor degrade(const Tensor& hr, const DegradationConfig& cfg) {
    cfg.validate();
    require_image(hr, "degrade");
    const int s = cfg.scale_factor;
    if (hr.dim(2) % s || hr.dim(3) % s)
        throw DimensionError("degrade: image " + shape_str(hr.shape()) + " not divisible by scale factor " +
                             std::to_string(s));
    Tensor y = hr;
    for (Stage stage : cfg.stage_order) {
        switch (stage) {
            case Stage::Blur:
                y = cfg.blur_kind == BlurKind::Box ? box_blur(y, cfg.blur_kernel)
                                                   : gaussian_blur(y, cfg.blur_sigma, cfg.blur_kernel);
                break;
            case Stage::Downsample: y = decimate(y, s); break;
            case Stage::Noise: y = add_noise(y, cfg.noise_sigma, mix_seed(cfg.seed, 0x6e6f697365ull)); break;
        }
    }
    if (y.dim(2) * s != hr.dim(2))
        throw ValidationError("degrade: stage_order must include downsample when scale_factor > 1");
    for (auto& v : y.values()) v = std::clamp(v, 0.0, 1.0);
    return y;
}

const char* generator_name(int family) {
    static const char* names[kGeneratorFamilies] = {"gradient", "checkerboard", "blobs", "rectangles"};
    return names[((family % kGeneratorFamilies) + kGeneratorFamilies) % kGeneratorFamilies];
}

Tensor generate_hr(int family, int size, uint64_t seed) {
    if (size < 1) throw DimensionError("generate_hr: size must be positive");
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto color = [&] { return std::array<double, 3>{u(rng), u(rng), u(rng)}; };
    Tensor img({1, 3, size, size});
    const double S = size;
    switch (((family % kGeneratorFamilies) + kGeneratorFamilies) % kGeneratorFamilies) {
        case 0: {  // linear gradient along a random direction
            const double theta = 2.0 * M_PI * u(rng);
            const double dx = std::cos(theta), dy = std::sin(theta);
            const auto c0 = color(), c1 = color();
            const double span = (std::abs(dx) + std::abs(dy)) * (S - 1);
            const double lo = std::min(0.0, dx * (S - 1)) + std::min(0.0, dy * (S - 1));
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const double t = span > 0 ? (dx * x + dy * y - lo) / span : 0.0;
                    for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = c0[c] + (c1[c] - c0[c]) * t;
                }
            break;
        }
        case 1: {  // checkerboard with random cell size and phase
            const int cell = 4 + 2 * static_cast<int>(u(rng) * 3);
            const int ox = static_cast<int>(u(rng) * cell), oy = static_cast<int>(u(rng) * cell);
            const auto c0 = color(), c1 = color();
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const bool odd = (((x + ox) / cell) + ((y + oy) / cell)) % 2;
                    for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = odd ? c1[c] : c0[c];
                }
            break;
        }
        case 2: {  // sum of Gaussian blobs over a background
            const auto bg = color();
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < size; ++y)
                    for (int x = 0; x < size; ++x) img.at(0, c, y, x) = 0.5 * bg[c];
            for (int b = 0; b < 3; ++b) {
                const double cx = u(rng) * S, cy = u(rng) * S, sg = S * (0.06 + 0.14 * u(rng));
                const auto col = color();
                for (int y = 0; y < size; ++y)
                    for (int x = 0; x < size; ++x) {
                        const double g = std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * sg * sg));
                        for (int c = 0; c < 3; ++c) img.at(0, c, y, x) += (col[c] - 0.5 * bg[c]) * g;
                    }
            }
            break;
        }
        default: {  // overlapping axis-aligned rectangles
            const auto bg = color();
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < size; ++y)
                    for (int x = 0; x < size; ++x) img.at(0, c, y, x) = bg[c];
            for (int r = 0; r < 4; ++r) {
                int x0 = static_cast<int>(u(rng) * S), x1 = static_cast<int>(u(rng) * S);
                int y0 = static_cast<int>(u(rng) * S), y1 = static_cast<int>(u(rng) * S);
                if (x0 > x1) std::swap(x0, x1);
                if (y0 > y1) std::swap(y0, y1);
                const auto col = color();
                for (int y = y0; y <= y1; ++y)
                    for (int x = x0; x <= x1; ++x)
                        for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = col[c];
            }
            break;
        }
    }
    image_io::quantize8_inplace(img);
    return img;
}

PairDataset synth_dataset(int count, int hr_size, const DegradationConfig& cfg, uint64_t seed, int patch_size) {
    cfg.validate();
    if (count < 1) throw ValidationError("synth_dataset: count must be >= 1");
    if (hr_size < 1 || hr_size % cfg.scale_factor || hr_size % patch_size)
        throw DimensionError("synth_dataset: hr_size " + std::to_string(hr_size) +
                             " must be divisible by scale factor " + std::to_string(cfg.scale_factor) +
                             " and patch size " + std::to_string(patch_size));
    PairDataset ds;
    ds.config = cfg;
    ds.config.seed = seed;
    ds.seed = seed;
    const std::string h = ds.config.hash();
    for (int i = 0; i < count; ++i) {
        const uint64_t item_seed = mix_seed(seed, static_cast<uint64_t>(i));
        Tensor hr = generate_hr(i % kGeneratorFamilies, hr_size, mix_seed(item_seed, 1));
        DegradationConfig item = ds.config;
        item.seed = item_seed;
        Tensor lr = degrade(hr, item);
        image_io::quantize8_inplace(lr);
        ds.hr.push_back(std::move(hr));
        ds.lr.push_back(std::move(lr));
        ds.manifest.push_back({generator_name(i), item_seed, h});
    }
    return ds;
}

namespace {
std::string pair_file(size_t i, const char* kind) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "pair_%04zu_%s.ppm", i, kind);
    return buf;
}
}  // namespace

void save_pairs(const PairDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json pairs = json::array();
    for (size_t i = 0; i < ds.size(); ++i) {
        const auto hr_name = pair_file(i, "hr"), lr_name = pair_file(i, "lr");
        image_io::write_ppm(dir / hr_name, ds.hr[i]);
        image_io::write_ppm(dir / lr_name, ds.lr[i]);
        pairs.push_back({{"hr", hr_name},
                         {"lr", lr_name},
                         {"generator", ds.manifest[i].generator},
                         {"seed", ds.manifest[i].seed},
                         {"config_hash", ds.manifest[i].config_hash}});
    }
    json manifest = {{"version", 1},
                     {"seed", ds.seed},
                     {"config", json::parse(ds.config.canonical_text())},
                     {"config_hash", ds.config.hash()},
                     {"pairs", pairs}};
    std::ofstream out(dir / kManifestName);
    if (!out) throw IoError("cannot write " + (dir / kManifestName).string());
    out << manifest.dump(2) << "\n";
}

LoadedPairs load_pairs(const std::filesystem::path& dir) {
    const auto path = dir / kManifestName;
    if (!std::filesystem::exists(path)) throw FormatError("no manifest: " + path.string() + " does not exist");
    std::ifstream in(path);
    LoadedPairs result;
    PairDataset& ds = result.dataset;
    try {
        json m = json::parse(in);
        ds.seed = m.at("seed").get<uint64_t>();
        ds.config = DegradationConfig::from_canonical_text(m.at("config").dump());
        const std::string stored = m.at("config_hash").get<std::string>();
        const std::string recomputed = ds.config.hash();
        if (stored != recomputed)
            result.warnings.push_back("integrity: manifest config_hash " + stored + " does not match recomputed " +
                                      recomputed);
        for (const auto& p : m.at("pairs")) {
            PairRecord rec{p.at("generator").get<std::string>(), p.at("seed").get<uint64_t>(),
                           p.at("config_hash").get<std::string>()};
            if (rec.config_hash != recomputed)
                result.warnings.push_back("integrity: pair " + p.at("hr").get<std::string>() +
                                          " config_hash does not match recomputed " + recomputed);
            ds.hr.push_back(image_io::read_ppm(dir / p.at("hr").get<std::string>()));
            ds.lr.push_back(image_io::read_ppm(dir / p.at("lr").get<std::string>()));
            ds.manifest.push_back(std::move(rec));
        }
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": corrupt manifest: " + e.what());
    } catch (const ValidationError& e) {
        throw FormatError(path.string() + ": invalid config in manifest: " + e.what());
    }
    if (ds.size() == 0) throw FormatError(path.string() + ": manifest lists no pairs");
    const int s = ds.config.scale_factor;
    for (size_t i = 0; i < ds.size(); ++i)
        if (ds.lr[i].dim(2) * s != ds.hr[i].dim(2) || ds.lr[i].dim(3) * s != ds.hr[i].dim(3))
            throw FormatError(path.string() + ": pair " + std::to_string(i) + " LR size does not match HR / scale");
    return result;
}

}  // namespace ctxsr::degradation

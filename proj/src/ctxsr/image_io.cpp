#include "ctxsr/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "ctxsr/error.hpp"

namespace ctxsr::image_io {

double level_value(int v) { return static_cast<double>(static_cast<float>(v) / 255.0f); }

namespace {
int to_level(double x) { return static_cast<int>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)); }
}  // namespace

double quantize8(double x) { return level_value(to_level(x)); }

void quantize8_inplace(Tensor& image) {
    for (auto& v : image.values()) v = quantize8(v);
}

void write_ppm(const std::filesystem::path& path, const Tensor& image, int64_t index) {
    require_rank(image, 4, "write_ppm");
    if (image.dim(1) != 3) throw DimensionError("write_ppm: expected 3 channels, got " + shape_str(image.shape()));
    if (index < 0 || index >= image.dim(0)) throw DimensionError("write_ppm: batch index out of range");
    const int64_t H = image.dim(2), W = image.dim(3);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "P6\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> buf(static_cast<size_t>(H * W * 3));
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
            for (int64_t c = 0; c < 3; ++c)
                buf[static_cast<size_t>((y * W + x) * 3 + c)] = static_cast<unsigned char>(to_level(image.at(index, c, y, x)));
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

namespace {
// Reads the next header token, skipping whitespace and # comments.
std::string next_token(std::istream& in, const std::filesystem::path& path) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {}
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    if (tok.empty()) throw FormatError(path.string() + ": truncated PPM header");
    return tok;
}

int64_t parse_dim(const std::string& tok, const std::filesystem::path& path) {
    try {
        size_t used = 0;
        long long v = std::stoll(tok, &used);
        if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw FormatError(path.string() + ": bad PPM header value '" + tok + "'");
    }
}
}  // namespace

Tensor read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    if (next_token(in, path) != "P6") throw FormatError(path.string() + ": not a binary PPM (P6)");
    const int64_t W = parse_dim(next_token(in, path), path);
    const int64_t H = parse_dim(next_token(in, path), path);
    if (parse_dim(next_token(in, path), path) != 255) throw FormatError(path.string() + ": only maxval 255 supported");
    std::vector<unsigned char> buf(static_cast<size_t>(H * W * 3));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
        throw FormatError(path.string() + ": truncated pixel data");
    Tensor image({1, 3, H, W});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
            for (int64_t c = 0; c < 3; ++c) image.at(0, c, y, x) = level_value(buf[static_cast<size_t>((y * W + x) * 3 + c)]);
    return image;
}

}  // namespace ctxsr::image_io

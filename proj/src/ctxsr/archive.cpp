#include "ctxsr/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "ctxsr/error.hpp"

namespace ctxsr::archive {

static_assert(std::endian::native == std::endian::little, "archive IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'T', 'X', 'S', 'R', 'A', 'R', 'C'};

class Writer {
public:
    template <class T>
    void put(T v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }
    void put_str(const std::string& s) {
        put(static_cast<uint32_t>(s.size()));
        buf_.insert(buf_.end(), s.begin(), s.end());
    }
    void raw(const char* p, size_t n) { buf_.insert(buf_.end(), p, p + n); }
    const std::vector<char>& bytes() const { return buf_; }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    Reader(std::vector<char> data, std::string file) : data_(std::move(data)), file_(std::move(file)) {}

    template <class T>
    T get() {
        T v;
        std::memcpy(&v, take(sizeof(T)), sizeof(T));
        return v;
    }
    std::string get_str() {
        const auto n = get<uint32_t>();
        const char* p = take(n);
        return {p, n};
    }
    const char* take(size_t n) {
        if (n > data_.size() - pos_) fail("truncated archive");
        const char* p = data_.data() + pos_;
        pos_ += n;
        return p;
    }
    bool done() const { return pos_ == data_.size(); }
    size_t remaining() const { return data_.size() - pos_; }
    [[noreturn]] void fail(const std::string& what) const { throw FormatError(file_ + ": " + what); }

private:
    std::vector<char> data_;
    std::string file_;
    size_t pos_ = 0;
};

}  // namespace

void round_to_f32(Tensor& t) {
    for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
}

void save(const std::filesystem::path& path, const Archive& a) {
    Writer w;
    w.raw(kMagic, sizeof kMagic);
    w.put(kVersion);
    w.put_str(a.config_hash);
    w.put(a.encoder_seed);
    w.put_str(a.config_json);
    w.put(static_cast<uint32_t>(a.tensors.size()));
    for (const auto& [name, t] : a.tensors) {
        w.put_str(name);
        w.put(kDtypeF32);
        w.put(static_cast<uint32_t>(t.rank()));
        for (int64_t d : t.shape()) w.put(d);
        for (double v : t.values()) w.put(static_cast<float>(v));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IoError("write failed for " + path.string());
}

Archive load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(std::move(data), path.string());
    if (std::memcmp(r.take(sizeof kMagic), kMagic, sizeof kMagic) != 0) r.fail("not a tensor archive (bad magic)");
    if (const auto v = r.get<uint32_t>(); v != kVersion) r.fail("unsupported archive version " + std::to_string(v));
    Archive a;
    a.config_hash = r.get_str();
    a.encoder_seed = r.get<uint64_t>();
    a.config_json = r.get_str();
    const auto count = r.get<uint32_t>();
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = r.get_str();
        if (r.get<uint8_t>() != kDtypeF32) r.fail("entry '" + name + "' has an unknown dtype tag");
        const auto rank = r.get<uint32_t>();
        if (rank > 8) r.fail("entry '" + name + "' has implausible rank " + std::to_string(rank));
        Shape shape;
        for (uint32_t k = 0; k < rank; ++k) {
            const auto d = r.get<int64_t>();
            if (d < 0 || d > (int64_t{1} << 32)) r.fail("entry '" + name + "' has a bad dimension");
            shape.push_back(d);
        }
        if (static_cast<uint64_t>(shape_numel(shape)) > r.remaining() / sizeof(float)) r.fail("truncated archive");
        Tensor t(shape);
        const char* p = r.take(static_cast<size_t>(t.numel()) * sizeof(float));
        for (int64_t k = 0; k < t.numel(); ++k) {
            float f;
            std::memcpy(&f, p + k * sizeof(float), sizeof f);
            t[k] = f;
        }
        if (!a.tensors.emplace(std::move(name), std::move(t)).second) r.fail("duplicate entry");
    }
    if (!r.done()) r.fail("trailing bytes after last entry");
    return a;
}

}  // namespace ctxsr::archive

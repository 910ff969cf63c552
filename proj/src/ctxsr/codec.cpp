#include "ctxsr/codec.hpp"

#include <algorithm>

#include "ctxsr/error.hpp"

namespace ctxsr::codec {

Latent encode(const Tensor& image, int patch_size) {
    require_rank(image, 4, "encode");
    const int64_t p = patch_size;
    const int64_t B = image.dim(0), C = image.dim(1), H = image.dim(2), W = image.dim(3);
    if (p < 1 || H % p || W % p)
        throw DimensionError("encode: image " + shape_str(image.shape()) + " not divisible by patch size " +
                             std::to_string(p));
    const int64_t h = H / p, w = W / p;
    Latent z{Tensor({B, C * p * p, h, w}), patch_size};
    for (int64_t n = 0; n < B; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t dy = 0; dy < p; ++dy)
                for (int64_t dx = 0; dx < p; ++dx)
                    for (int64_t i = 0; i < h; ++i)
                        for (int64_t j = 0; j < w; ++j)
                            z.data.at(n, (c * p + dy) * p + dx, i, j) = 2.0 * image.at(n, c, p * i + dy, p * j + dx) - 1.0;
    return z;
}

Tensor decode(const Latent& z, bool clip) {
    require_rank(z.data, 4, "decode");
    const int64_t p = z.patch_size;
    const int64_t B = z.data.dim(0), Cz = z.data.dim(1), h = z.data.dim(2), w = z.data.dim(3);
    if (p < 1 || Cz % (p * p))
        throw DimensionError("decode: " + std::to_string(Cz) + " latent channels not divisible by patch area " +
                             std::to_string(p * p));
    const int64_t C = Cz / (p * p);
    Tensor image({B, C, h * p, w * p});
    for (int64_t n = 0; n < B; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t dy = 0; dy < p; ++dy)
                for (int64_t dx = 0; dx < p; ++dx)
                    for (int64_t i = 0; i < h; ++i)
                        for (int64_t j = 0; j < w; ++j) {
                            double v = (z.data.at(n, (c * p + dy) * p + dx, i, j) + 1.0) * 0.5;
                            image.at(n, c, p * i + dy, p * j + dx) = clip ? std::clamp(v, 0.0, 1.0) : v;
                        }
    return image;
}

}  // namespace ctxsr::codec

#pragma once

#include "ctxsr/tensor.hpp"

// Lossless patchify codec used as the latent space for diffusion.
//
// encode: (B, C, H, W) in [0, 1] → (B, C·p², H/p, W/p) in [-1, 1] via 2x − 1.
// Latent channel c·p² + dy·p + dx holds pixel (p·i + dy, p·j + dx) of
// image channel c.
//
// decode(encode(x)) == x bit-exactly whenever every pixel is a multiple of
// 2^-54. That covers single-precision pixel values above 2^-30, so every
// image read through image_io qualifies. Below 0.25 the double 2x - 1 cannot
// hold finer bits.
namespace ctxsr::codec {

struct Latent {
    Tensor data;
    int patch_size = 2;
};

Latent encode(const Tensor& image, int patch_size = 2);

// Exact inverse of encode. With `clip`, pixels are clipped to [0, 1]; used
// for latents produced by the sampler.
Tensor decode(const Latent& z, bool clip = false);

}  // namespace ctxsr::codec

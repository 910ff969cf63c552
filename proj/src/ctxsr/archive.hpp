#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "ctxsr/tensor.hpp"

// Named-tensor archive used for checkpoints and sampled latents.
//
//   "CTXSRARC" | u32 version | str config_hash | u64 encoder_seed | str config_json
//   u32 count | count × (str name | u8 dtype | u32 rank | rank × i64 dim | f32 payload)
//
// Strings are u32 length + bytes; all integers and floats little-endian.
// Entries are written in name order. Values are stored as float32, so a
// tensor round-trips bit-exactly iff it is float32-representable.
namespace ctxsr::archive {

inline constexpr uint32_t kVersion = 1;
inline constexpr uint8_t kDtypeF32 = 1;

struct Archive {
    std::string config_hash;
    uint64_t encoder_seed = 0;
    std::string config_json;
    std::map<std::string, Tensor> tensors;
};

void save(const std::filesystem::path& path, const Archive& a);
// Throws FormatError naming the file for bad magic, version or truncation.
Archive load(const std::filesystem::path& path);

// Rounds every element to the nearest float32.
void round_to_f32(Tensor& t);

}  // namespace ctxsr::archive

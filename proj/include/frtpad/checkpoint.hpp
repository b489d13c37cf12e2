#pragma once

// Model checkpoint in the container's binary envelope, little-endian:
//
//   "FPRM" | version u16 | config: length u32 + UTF-8 JSON
//   entry count u32, then per entry:
//     name: length u16 + UTF-8 | trainable u8 | rank u8 | dims u32 x rank
//     data f32 x numel

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "frtpad/config.hpp"

namespace frtpad {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ParamSet params;
};

std::vector<std::uint8_t> encode_checkpoint(const ModelConfig& config, const ParamSet& params);
// Throws FormatError on malformed bytes and ConfigError on a bad embedded
// config.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ParamSet& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace frtpad

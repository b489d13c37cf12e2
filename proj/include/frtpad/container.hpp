#pragma once

// FeatureContainer: the binary transport for precomputed frozen-backbone
// features. All integers and floats are little-endian.
//
//   "FSTK" | version u16 | sample count u32 | level count u8
//   level dims: (c u16, h u16, w u16) x level count
//   per sample:
//     label u8 | dataset_id: length u16 + UTF-8 bytes
//     raw dims (c, h, w) u16 x 3 | raw data f32 x c*h*w
//     per level: f32 x c_i*h_i*w_i

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "frtpad/sample.hpp"

namespace frtpad {

inline constexpr std::uint16_t kContainerVersion = 1;

class FormatError : public std::runtime_error {
 public:
  enum class Kind { kBadMagic, kVersionMismatch, kTruncated, kTrailingBytes, kInvalidField, kIo };

  FormatError(Kind kind, std::size_t offset, const std::string& detail);

  [[nodiscard]] Kind kind() const { return kind_; }
  [[nodiscard]] std::size_t offset() const { return offset_; }

 private:
  Kind kind_;
  std::size_t offset_;
};

const char* to_string(FormatError::Kind kind);

struct Container {
  std::vector<LevelDims> levels;
  Dataset samples;
};

// Level dims come from the first sample; an empty dataset yields a
// header-only file with zero levels unless `levels` is given explicitly.
std::vector<std::uint8_t> encode_container(const Dataset& samples);
std::vector<std::uint8_t> encode_container(std::span<const Sample> samples,
                                           const std::vector<LevelDims>& levels);

// Feature stacks read back carry source_tag "file"; the tag is not stored.
Container decode_container(std::span<const std::uint8_t> bytes);

void write_container(const std::filesystem::path& path, const Dataset& samples);
Container read_container(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

struct ContainerSummary {
  std::size_t samples = 0;
  std::vector<LevelDims> levels;
  // dataset_id -> {attack count, bona fide count}
  std::map<std::string, std::pair<std::size_t, std::size_t>> per_dataset;
};

ContainerSummary summarize(const Container& c);

// Human-readable sidecar: file name, dataset ids, per-class counts, dims.
nlohmann::json container_manifest(const std::string& file_name, const Container& c);

}  // namespace frtpad

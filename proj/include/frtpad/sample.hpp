#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "frtpad/tensor.hpp"

namespace frtpad {

enum class Label : std::uint8_t { kAttack = 0, kBonafide = 1 };

inline int label_index(Label l) { return static_cast<int>(l); }

struct LevelDims {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  [[nodiscard]] Shape shape() const { return {channels, height, width}; }
  [[nodiscard]] std::size_t numel() const { return channels * height * width; }
  friend bool operator==(const LevelDims&, const LevelDims&) = default;
};

// Multi-level activations tapped from a frozen face-task network, shallow to
// deep. Level i has shape [c_i x h_i x w_i].
struct FeatureStack {
  std::vector<Tensor> levels;
  std::string source_tag;

  [[nodiscard]] std::vector<LevelDims> dims() const;
};

struct Sample {
  Tensor raw_input;  // [3 x H x W]
  FeatureStack features;
  Label label = Label::kAttack;
  std::string dataset_id;
};

using Dataset = std::vector<Sample>;

}  // namespace frtpad

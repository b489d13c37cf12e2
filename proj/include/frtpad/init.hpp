#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "frtpad/tensor.hpp"

namespace frtpad {

using Rng = std::mt19937_64;

// Uniform Glorot: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const float limit = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
  std::uniform_real_distribution<float> dist(-limit, limit);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace frtpad

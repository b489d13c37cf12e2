#pragma once

#include <cstdint>
#include <vector>

#include "frtpad/tensor.hpp"

namespace frtpad {

struct AdamConfig {
  float lr = 1e-4f;
  float weight_decay = 5e-5f;  // classic L2: added to the gradient before the moments
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// First/second moment buffers plus the step counter. Moments start at zero
// and are allocated lazily on the first step.
struct AdamState {
  std::int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

// One bias-corrected Adam update of every trainable entry in `params`.
// Frozen entries are left untouched.
void adam_step(ParamSet& params, const GradientSet& grads, const AdamConfig& config,
               AdamState& state);

}  // namespace frtpad

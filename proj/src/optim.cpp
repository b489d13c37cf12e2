#include "frtpad/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace frtpad {

void adam_step(ParamSet& params, const GradientSet& grads, const AdamConfig& config,
               AdamState& state) {
  if (grads.size() != params.size()) throw ShapeError("adam_step: gradient set size mismatch");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state size mismatch");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const float bc1 = static_cast<float>(1.0 - std::pow(static_cast<double>(config.beta1), t));
  const float bc2 = static_cast<float>(1.0 - std::pow(static_cast<double>(config.beta2), t));

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& e = params.entry(i);
    if (!e.trainable) continue;
    if (!grads.has(i)) continue;
    const Tensor& g = grads.at(i);
    if (g.shape() != e.value.shape()) {
      throw ShapeError("adam_step: gradient for '" + e.name + "' has shape " +
                       shape_to_string(g.shape()) + ", parameter has " +
                       shape_to_string(e.value.shape()));
    }
    if (state.m[i].empty()) {
      state.m[i] = Tensor(e.value.shape(), 0.0f);
      state.v[i] = Tensor(e.value.shape(), 0.0f);
    }
    auto w = e.value.data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const float gk = g[k] + config.weight_decay * w[k];
      m[k] = config.beta1 * m[k] + (1.0f - config.beta1) * gk;
      v[k] = config.beta2 * v[k] + (1.0f - config.beta2) * gk * gk;
      const float mhat = m[k] / bc1;
      const float vhat = v[k] / bc2;
      w[k] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

}  // namespace frtpad

#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "frtpad/detector.hpp"
#include "frtpad/synthetic.hpp"
#include "frtpad/trainer.hpp"

namespace frtpad::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> dist(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

inline BasicTensor<double> random_dtensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  BasicTensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

// A model small enough for unit tests: 8x8 inputs, 3 feature levels.
inline ModelConfig small_model(bool use_adapter = true, Topology topology = Topology::kStepByStep) {
  ModelConfig m;
  m.detector.input = {3, 8, 8};
  m.detector.channels = {4, 6};
  m.detector.feature_dim = 8;
  m.adapter.levels = {{4, 6, 6}, {6, 4, 4}, {8, 3, 3}};
  m.adapter.proj_channels = 4;
  m.adapter.pool_size = 2;
  m.adapter.vertex_dim = 8;
  m.adapter.hidden_dim = 6;
  m.adapter.output_dim = 8;
  m.adapter.topology = topology;
  m.use_adapter = use_adapter;
  return m;
}

inline SynthSpec small_synth(const ModelConfig& m, std::size_t per_class, std::uint64_t seed,
                             SignalTarget target = SignalTarget::kBoth) {
  SynthSpec s;
  s.per_class = per_class;
  s.raw = m.detector.input;
  s.levels = m.adapter.levels;
  s.signal_target = target;
  s.seed = seed;
  return s;
}

inline std::vector<const Sample*> pointers(const Dataset& d) {
  std::vector<const Sample*> out;
  for (const auto& s : d) out.push_back(&s);
  return out;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const auto x = a.data(), y = b.data();
  return std::memcmp(x.data(), y.data(), x.size_bytes()) == 0;
}

inline bool bitwise_equal(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.entry(i).name != b.entry(i).name || !bitwise_equal(a.entry(i).value, b.entry(i).value)) return false;
  }
  return true;
}

}  // namespace frtpad::testing

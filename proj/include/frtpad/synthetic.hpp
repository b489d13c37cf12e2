#pragma once

// Seeded synthetic datasets with a controllable location for the class
// signal. Each component (raw input, feature level i) is
//
//   x = noise_std * N(0, 1) + shift + y * amplitude * (u 1^T)
//
// with y = +1 for bona fide and -1 for attack, and u a per-component
// channel vector with unit mean square, drawn from a pattern seed. The
// pattern is rank 1 over (channel, spatial).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "frtpad/adapter.hpp"
#include "frtpad/sample.hpp"

namespace frtpad {

enum class SignalTarget { kRawOnly, kFeaturesOnly, kBoth };

std::string to_string(SignalTarget t);
SignalTarget signal_target_from_string(const std::string& s);

struct SynthSpec {
  std::string dataset_id = "synthetic";
  std::string source_tag = "synthetic";
  std::size_t per_class = 100;
  LevelDims raw = {3, 32, 32};
  std::vector<LevelDims> levels = AdapterConfig{}.levels;
  SignalTarget signal_target = SignalTarget::kBoth;
  double amplitude = 0.5;
  double raw_amplitude = 0.5;
  double noise_std = 1.0;
  // Mean offset per component: index 0 is the raw input, index i the
  // feature level i-1. Empty means no shift.
  std::vector<double> domain_shift;
  std::uint64_t seed = 0;
  // Class patterns for the feature levels. Datasets sharing it share the
  // discriminative direction.
  std::uint64_t pattern_seed = 7;
  // Class pattern for the raw input; defaults to pattern_seed. Distinct
  // values across datasets make the raw-input cue domain specific.
  std::optional<std::uint64_t> raw_pattern_seed;

  void validate() const;
};

// Samples alternate attack, bona fide, ... with exactly per_class of each.
Dataset generate_synthetic(const SynthSpec& spec);

// The unit-mean-square channel vector u used for component `index`
// (0 = raw input, i = level i-1).
std::vector<double> class_pattern(const SynthSpec& spec, std::size_t index);

}  // namespace frtpad

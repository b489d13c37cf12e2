#include "frtpad/synthetic.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "frtpad/init.hpp"

namespace frtpad {

std::string to_string(SignalTarget t) {
  switch (t) {
    case SignalTarget::kRawOnly: return "raw_only";
    case SignalTarget::kFeaturesOnly: return "features_only";
    case SignalTarget::kBoth: return "both";
  }
  return "both";
}

SignalTarget signal_target_from_string(const std::string& s) {
  if (s == "raw_only") return SignalTarget::kRawOnly;
  if (s == "features_only") return SignalTarget::kFeaturesOnly;
  if (s == "both") return SignalTarget::kBoth;
  throw std::invalid_argument("unknown signal_target '" + s +
                              "' (expected raw_only, features_only or both)");
}

void SynthSpec::validate() const {
  if (per_class == 0) throw std::invalid_argument("per_class must be positive");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
    throw std::invalid_argument("noise_std must be finite and >= 0");
  }
  if (!std::isfinite(amplitude) || !std::isfinite(raw_amplitude)) {
    throw std::invalid_argument("amplitudes must be finite");
  }
  if (raw.numel() == 0) throw std::invalid_argument("raw dims must be positive");
  if (levels.size() < 2) throw std::invalid_argument("at least two feature levels are required");
  for (const auto& l : levels) {
    if (l.numel() == 0) throw std::invalid_argument("level dims must be positive");
  }
  if (!domain_shift.empty() && domain_shift.size() != levels.size() + 1) {
    throw std::invalid_argument("domain_shift needs " + std::to_string(levels.size() + 1) +
                                " entries (raw input + one per level), got " +
                                std::to_string(domain_shift.size()));
  }
}

std::vector<double> class_pattern(const SynthSpec& spec, std::size_t index) {
  const std::size_t channels = index == 0 ? spec.raw.channels : spec.levels.at(index - 1).channels;
  const std::uint64_t seed = index == 0 ? spec.raw_pattern_seed.value_or(spec.pattern_seed)
                                        : spec.pattern_seed;
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + index);
  std::normal_distribution<double> normal;
  std::vector<double> u(channels);
  double ms = 0.0;
  for (auto& v : u) {
    v = normal(rng);
    ms += v * v;
  }
  ms /= static_cast<double>(channels);
  const double scale = ms > 0.0 ? 1.0 / std::sqrt(ms) : 0.0;
  for (auto& v : u) v *= scale;
  return u;
}

namespace {

Tensor component(const LevelDims& dims, const std::vector<double>& pattern, double signal,
                 double shift, double noise_std, Rng& rng) {
  std::normal_distribution<double> normal;
  Tensor t(dims.shape());
  auto data = t.data();
  const std::size_t plane = dims.height * dims.width;
  for (std::size_t c = 0; c < dims.channels; ++c) {
    const double mean = shift + signal * pattern[c];
    for (std::size_t k = 0; k < plane; ++k) {
      data[c * plane + k] = static_cast<float>(mean + noise_std * normal(rng));
    }
  }
  return t;
}

}  // namespace

Dataset generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  const std::size_t n_comp = spec.levels.size() + 1;
  std::vector<std::vector<double>> patterns;
  for (std::size_t i = 0; i < n_comp; ++i) patterns.push_back(class_pattern(spec, i));
  const bool raw_signal = spec.signal_target != SignalTarget::kFeaturesOnly;
  const bool feature_signal = spec.signal_target != SignalTarget::kRawOnly;

  Rng rng(spec.seed);
  Dataset out;
  out.reserve(2 * spec.per_class);
  for (std::size_t j = 0; j < 2 * spec.per_class; ++j) {
    Sample s;
    s.label = j % 2 ? Label::kBonafide : Label::kAttack;
    s.dataset_id = spec.dataset_id;
    s.features.source_tag = spec.source_tag;
    const double y = s.label == Label::kBonafide ? 1.0 : -1.0;
    auto shift = [&](std::size_t i) { return spec.domain_shift.empty() ? 0.0 : spec.domain_shift[i]; };
    s.raw_input = component(spec.raw, patterns[0], raw_signal ? y * spec.raw_amplitude : 0.0,
                            shift(0), spec.noise_std, rng);
    for (std::size_t i = 0; i < spec.levels.size(); ++i) {
      s.features.levels.push_back(component(spec.levels[i], patterns[i + 1],
                                            feature_signal ? y * spec.amplitude : 0.0,
                                            shift(i + 1), spec.noise_std, rng));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace frtpad

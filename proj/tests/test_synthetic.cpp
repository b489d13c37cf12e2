#include "doctest.h"

#include <cmath>

#include "frtpad/synthetic.hpp"
#include "frtpad/trainer.hpp"
#include "helpers.hpp"

using namespace frtpad;
using frtpad::testing::bitwise_equal;

namespace {

bool same_dataset(const Dataset& a, const Dataset& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].label != b[i].label || a[i].dataset_id != b[i].dataset_id) return false;
    if (!bitwise_equal(a[i].raw_input, b[i].raw_input)) return false;
    for (std::size_t l = 0; l < a[i].features.levels.size(); ++l)
      if (!bitwise_equal(a[i].features.levels[l], b[i].features.levels[l])) return false;
  }
  return true;
}

std::vector<double> flat_stack(const Sample& s) {
  std::vector<double> x;
  for (const auto& l : s.features.levels) x.insert(x.end(), l.data().begin(), l.data().end());
  return x;
}

// Logistic regression by full-batch gradient descent, in double.
struct Probe {
  std::vector<double> w;
  double b = 0.0;

  double margin(const std::vector<double>& x) const {
    double z = b;
    for (std::size_t k = 0; k < x.size(); ++k) z += w[k] * x[k];
    return z;
  }
};

Probe fit_probe(const Dataset& data, int iterations, double lr) {
  std::vector<std::vector<double>> xs;
  for (const auto& s : data) xs.push_back(flat_stack(s));
  Probe p{std::vector<double>(xs[0].size(), 0.0), 0.0};
  for (int it = 0; it < iterations; ++it) {
    std::vector<double> gw(p.w.size(), 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double y = data[i].label == Label::kBonafide ? 1.0 : 0.0;
      const double err = 1.0 / (1.0 + std::exp(-p.margin(xs[i]))) - y;
      for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += err * xs[i][k];
      gb += err;
    }
    const double n = static_cast<double>(xs.size());
    for (std::size_t k = 0; k < gw.size(); ++k) p.w[k] -= lr * gw[k] / n;
    p.b -= lr * gb / n;
  }
  return p;
}

double accuracy(const Probe& p, const Dataset& data) {
  std::size_t right = 0;
  for (const auto& s : data) right += (p.margin(flat_stack(s)) >= 0.0) == (s.label == Label::kBonafide);
  return static_cast<double>(right) / static_cast<double>(data.size());
}

}  // namespace

TEST_CASE("generation is deterministic and seed dependent") {
  SynthSpec s;
  s.per_class = 5;
  s.seed = 3;
  CHECK(same_dataset(generate_synthetic(s), generate_synthetic(s)));
  auto other = s;
  other.seed = 4;
  CHECK_FALSE(same_dataset(generate_synthetic(s), generate_synthetic(other)));
}

TEST_CASE("counts, labels, shapes and ids") {
  SynthSpec s;
  s.per_class = 7;
  s.dataset_id = "M";
  s.source_tag = "F.R.";
  const auto d = generate_synthetic(s);
  REQUIRE(d.size() == 14);
  std::size_t bona = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(d[i].label == (i % 2 ? Label::kBonafide : Label::kAttack));
    bona += d[i].label == Label::kBonafide;
    CHECK(d[i].dataset_id == "M");
    CHECK(d[i].features.source_tag == "F.R.");
    CHECK(d[i].raw_input.shape() == s.raw.shape());
    CHECK(d[i].features.dims() == s.levels);
    CHECK(d[i].raw_input.all_finite());
  }
  CHECK(bona == 7);
}

TEST_CASE("features_only leaves the raw input class independent by construction") {
  // The raw input is drawn from the same noise stream whether or not a class
  // signal exists anywhere, so it cannot depend on the label.
  SynthSpec s;
  s.per_class = 10;
  s.signal_target = SignalTarget::kFeaturesOnly;
  s.seed = 5;
  auto silent = s;
  silent.amplitude = 0.0;
  silent.raw_amplitude = 0.0;
  const auto with_signal = generate_synthetic(s);
  const auto without = generate_synthetic(silent);
  for (std::size_t i = 0; i < with_signal.size(); ++i) {
    CHECK(bitwise_equal(with_signal[i].raw_input, without[i].raw_input));
    CHECK_FALSE(bitwise_equal(with_signal[i].features.levels[0], without[i].features.levels[0]));
  }
}

TEST_CASE("raw_only leaves the features class independent") {
  SynthSpec s;
  s.per_class = 10;
  s.signal_target = SignalTarget::kRawOnly;
  auto silent = s;
  silent.amplitude = 0.0;
  silent.raw_amplitude = 0.0;
  const auto a = generate_synthetic(s), b = generate_synthetic(silent);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK_FALSE(bitwise_equal(a[i].raw_input, b[i].raw_input));
    for (std::size_t l = 0; l < a[i].features.levels.size(); ++l)
      CHECK(bitwise_equal(a[i].features.levels[l], b[i].features.levels[l]));
  }
}

TEST_CASE("class patterns have unit mean square and follow their seeds") {
  SynthSpec s;
  for (std::size_t idx = 0; idx <= s.levels.size(); ++idx) {
    const auto u = class_pattern(s, idx);
    const std::size_t channels = idx == 0 ? s.raw.channels : s.levels[idx - 1].channels;
    REQUIRE(u.size() == channels);
    double ms = 0.0;
    for (double x : u) ms += x * x;
    CHECK(ms / static_cast<double>(u.size()) == doctest::Approx(1.0));
  }
  auto t = s;
  t.raw_pattern_seed = 99;
  CHECK(class_pattern(t, 0) != class_pattern(s, 0));
  CHECK(class_pattern(t, 1) == class_pattern(s, 1));
  t.seed = 1234;  // the sample seed does not move the pattern
  CHECK(class_pattern(t, 1) == class_pattern(s, 1));
}

TEST_CASE("domain shift moves component means") {
  SynthSpec s;
  s.per_class = 50;
  s.signal_target = SignalTarget::kFeaturesOnly;
  s.domain_shift = {2.0, 0.0, 0.0, 0.0, -1.0};
  const auto d = generate_synthetic(s);
  double raw = 0.0, last = 0.0;
  std::size_t nr = 0, nl = 0;
  for (const auto& x : d) {
    for (float v : x.raw_input.data()) raw += v, ++nr;
    for (float v : x.features.levels.back().data()) last += v, ++nl;
  }
  CHECK(raw / static_cast<double>(nr) == doctest::Approx(2.0).epsilon(0.01));
  // Class signals cancel in the balanced mean.
  CHECK(last / static_cast<double>(nl) == doctest::Approx(-1.0).epsilon(0.02));
}

TEST_CASE("invalid specs are rejected") {
  SynthSpec s;
  s.per_class = 0;
  CHECK_THROWS(generate_synthetic(s));
  s = SynthSpec{};
  s.noise_std = -1.0;
  CHECK_THROWS(generate_synthetic(s));
  s = SynthSpec{};
  s.domain_shift = {1.0, 2.0};
  CHECK_THROWS(generate_synthetic(s));
  s = SynthSpec{};
  s.levels.resize(1);
  CHECK_THROWS(generate_synthetic(s));
  CHECK_THROWS(signal_target_from_string("everywhere"));
  for (auto t : {SignalTarget::kRawOnly, SignalTarget::kFeaturesOnly, SignalTarget::kBoth})
    CHECK(signal_target_from_string(to_string(t)) == t);
}

TEST_CASE("a linear probe on the flattened stack separates a features_only dataset") {
  SynthSpec s;
  s.per_class = 200;
  s.signal_target = SignalTarget::kFeaturesOnly;
  s.seed = 8;
  const auto train = generate_synthetic(s);
  auto held = s;
  held.seed = 9;
  const auto test = generate_synthetic(held);
  const auto probe = fit_probe(train, 50, 0.01);
  const double acc = accuracy(probe, test);
  MESSAGE("probe held-out accuracy " << acc);
  CHECK(acc >= 0.95);
}

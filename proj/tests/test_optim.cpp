#include "doctest.h"

#include <cmath>

#include "frtpad/optim.hpp"

using namespace frtpad;

namespace {

GradientSet single_grad(float g) {
  GradientSet grads(1);
  grads.set(0, Tensor::vector({g}));
  return grads;
}

}  // namespace

TEST_CASE("zero gradient without weight decay leaves parameters unchanged") {
  ParamSet p;
  p.add("w", Tensor::vector({1.5f, -2.0f}));
  GradientSet g = GradientSet::zeros_like(p);
  AdamState state;
  AdamConfig cfg;
  cfg.weight_decay = 0.0f;
  for (int i = 0; i < 5; ++i) adam_step(p, g, cfg, state);
  CHECK(p.value("w") == Tensor::vector({1.5f, -2.0f}));
  CHECK(state.step == 5);
}

TEST_CASE("degenerate moments reduce to a signed step of size lr") {
  ParamSet p;
  p.add("w", Tensor::vector({1.0f}));
  AdamState state;
  AdamConfig cfg{.lr = 0.1f, .weight_decay = 0.0f, .beta1 = 0.0f, .beta2 = 0.0f, .eps = 1e-8f};
  adam_step(p, single_grad(1.0f), cfg, state);
  CHECK(p.value("w")[0] == doctest::Approx(0.9f).epsilon(1e-6));
}

TEST_CASE("100 steps on (w-2)^2 follow the reference recurrence and converge") {
  ParamSet p;
  p.add("w", Tensor::vector({0.0f}));
  AdamState state;
  AdamConfig cfg{.lr = 0.1f, .weight_decay = 0.0f};

  // Reference recurrence in double precision.
  double w = 0.0, m = 0.0, v = 0.0;
  const double b1 = 0.9, b2 = 0.999, lr = 0.1, eps = 1e-8;
  for (int t = 1; t <= 100; ++t) {
    adam_step(p, single_grad(2.0f * (p.value("w")[0] - 2.0f)), cfg, state);
    const double g = 2.0 * (w - 2.0);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    w -= lr * mh / (std::sqrt(vh) + eps);
  }
  CHECK(std::abs(w - 2.0) < 0.05);
  CHECK(std::abs(p.value("w")[0] - 2.0) < 0.05);
  CHECK(p.value("w")[0] == doctest::Approx(w).epsilon(1e-3));
}

TEST_CASE("weight decay is added to the gradient") {
  ParamSet a, b;
  a.add("w", Tensor::vector({2.0f}));
  b.add("w", Tensor::vector({2.0f}));
  AdamState sa, sb;
  AdamConfig with{.lr = 0.01f, .weight_decay = 0.5f};
  AdamConfig without{.lr = 0.01f, .weight_decay = 0.0f};
  // L2: g + wd * w = 0.25 + 0.5 * 2 = 1.25
  adam_step(a, single_grad(0.25f), with, sa);
  adam_step(b, single_grad(1.25f), without, sb);
  CHECK(a.value("w") == b.value("w"));
  CHECK(sa.m[0][0] == doctest::Approx(0.125f));
}

TEST_CASE("frozen entries are never updated") {
  ParamSet p;
  p.add("w", Tensor::vector({1.0f}));
  p.add("frozen", Tensor::vector({1.0f}), false);
  GradientSet g(2);
  g.set(0, Tensor::vector({1.0f}));
  g.set(1, Tensor::vector({1.0f}));
  AdamState state;
  adam_step(p, g, AdamConfig{.lr = 0.1f}, state);
  CHECK(p.value("w")[0] < 1.0f);
  CHECK(p.value("frozen")[0] == 1.0f);
}

TEST_CASE("shape mismatch between parameter and gradient") {
  ParamSet p;
  p.add("w", Tensor::vector({1.0f, 2.0f}));
  AdamState state;
  CHECK_THROWS_AS(adam_step(p, single_grad(1.0f), AdamConfig{}, state), ShapeError);
  CHECK_THROWS(adam_step(p, GradientSet(3), AdamConfig{}, state));
}

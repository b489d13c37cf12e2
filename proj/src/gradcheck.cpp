#include "frtpad/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "frtpad/adapter.hpp"
#include "frtpad/autodiff.hpp"
#include "frtpad/detector.hpp"
#include "frtpad/init.hpp"

namespace frtpad {

bool GradCheckReport::all_passed() const {
  return std::all_of(cases.begin(), cases.end(), [](const auto& c) { return c.passed(); });
}

double relative_error(std::span<const double> analytic, std::span<const double> numeric,
                      double floor) {
  if (analytic.size() != numeric.size()) throw ShapeError("relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
}

std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::vector<double> x, double step) {
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = f(x);
    x[i] = orig - step;
    const double down = f(x);
    x[i] = orig;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

namespace {

using DTensor = BasicTensor<double>;
using DTape = ad::Tape<double>;
using DVar = ad::Var<double>;
using DParams = BasicParamSet<double>;
using OpFn = std::function<DVar(DTape&, const std::vector<DVar>&)>;

constexpr double kStep = 1e-6;

DTensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  DTensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Max relative error over all inputs of the scalar head sum(op(inputs) .* R).
double check_op(const OpFn& op, const std::vector<DTensor>& inputs, Rng& rng) {
  DTensor weights;
  {
    DTape probe;
    std::vector<DVar> vars;
    for (const auto& in : inputs) vars.push_back(probe.constant(in));
    weights = random_tensor(op(probe, vars).shape(), rng);
  }
  auto head = [&](DTape& tape, const std::vector<DVar>& vars) {
    return ad::sum(ad::mul(op(tape, vars), tape.constant(weights)));
  };

  DTape tape;
  std::vector<DVar> vars;
  for (const auto& in : inputs) {
    DTensor leaf = in;
    leaf.set_requires_grad(true);
    vars.push_back(tape.leaf(std::move(leaf)));
  }
  tape.backward(head(tape, vars));

  // One norm over all inputs, so an input whose gradient is exactly zero
  // (a fully masked or dead path) does not turn rounding noise into a large
  // relative error.
  std::vector<double> analytic, numeric;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (const DTensor* g = tape.grad(vars[k])) {
      analytic.insert(analytic.end(), g->data().begin(), g->data().end());
    } else {
      analytic.insert(analytic.end(), inputs[k].numel(), 0.0);
    }
    auto f = [&](std::span<const double> x) {
      DTape t;
      std::vector<DVar> vs;
      for (std::size_t j = 0; j < inputs.size(); ++j) {
        vs.push_back(j == k ? t.constant(DTensor(inputs[j].shape(),
                                                 std::vector<double>(x.begin(), x.end())))
                            : t.constant(inputs[j]));
      }
      return head(t, vs).value()[0];
    };
    const auto n = central_difference(f, inputs[k].values(), kStep);
    numeric.insert(numeric.end(), n.begin(), n.end());
  }
  return relative_error(analytic, numeric);
}

// Directional check per trainable tensor: <grad, u> against the central
// difference of the loss along a random unit direction u. The per-tensor
// directional derivatives are compared as one vector.
double check_params(const DParams& params, const std::function<double(const DParams&)>& value,
                    const BasicGradientSet<double>& analytic, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  std::vector<double> a, n;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.entry(i).trainable) continue;
    const DTensor& g = analytic.at(i);
    std::vector<double> u(g.numel());
    const double unit = 1.0 / std::sqrt(static_cast<double>(u.size()));
    double dir = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
      u[k] = coin(rng) ? unit : -unit;
      dir += g[k] * u[k];
    }
    auto shifted = [&](double sign) {
      DParams p = params;
      auto w = p.entry(i).value.data();
      for (std::size_t k = 0; k < w.size(); ++k) w[k] += sign * kStep * u[k];
      return value(p);
    };
    a.push_back(dir);
    n.push_back((shifted(1.0) - shifted(-1.0)) / (2.0 * kStep));
  }
  return relative_error(a, n);
}

AdapterConfig tiny_adapter(Rng& rng, std::size_t seed) {
  AdapterConfig c;
  c.levels.clear();
  const std::size_t n = pick(rng, 2, 4);
  for (std::size_t i = 0; i < n; ++i) c.levels.push_back({pick(rng, 1, 3), pick(rng, 3, 5), pick(rng, 3, 5)});
  c.proj_channels = 3;
  c.pool_size = 2;
  c.vertex_dim = 5;
  c.hidden_dim = 3;
  c.output_dim = 4;
  c.heads = 2;
  c.topology = seed % 2 ? Topology::kDense : Topology::kStepByStep;
  c.leaky_scores = seed % 4 == 3;
  return c;
}

DetectorConfig tiny_detector() {
  DetectorConfig c;
  c.input = {3, 8, 8};
  c.channels = {3, 4};
  c.feature_dim = 5;
  return c;
}

Sample random_sample(const ModelConfig& config, Rng& rng) {
  Sample s;
  s.raw_input = random_tensor(config.detector.input.shape(), rng).cast<float>();
  for (const auto& l : config.adapter.levels) {
    s.features.levels.push_back(random_tensor(l.shape(), rng).cast<float>());
  }
  s.label = std::bernoulli_distribution(0.5)(rng) ? Label::kBonafide : Label::kAttack;
  return s;
}

// Perturbs every parameter away from the zero-initialized biases so no
// ReLU input sits exactly on its kink.
DParams jittered(const ParamSet& params, Rng& rng) {
  DParams out = params.cast<double>();
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (auto& v : out.entry(i).value.data()) v += dist(rng);
  }
  return out;
}

using CaseFn = std::function<double(Rng&, std::size_t seed)>;

struct NamedCase {
  const char* name;
  CaseFn run;
};

std::vector<NamedCase> primitive_cases() {
  std::vector<NamedCase> cases;
  cases.push_back({"matmul", [](Rng& rng, std::size_t) {
    const std::size_t m = pick(rng, 1, 5), k = pick(rng, 1, 5), n = pick(rng, 1, 5);
    return check_op([](DTape&, const std::vector<DVar>& v) { return ad::matmul(v[0], v[1]); },
                    {random_tensor({m, k}, rng), random_tensor({k, n}, rng)}, rng);
  }});
  cases.push_back({"add", [](Rng& rng, std::size_t) {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 4)};
    return check_op([](DTape&, const std::vector<DVar>& v) { return ad::add(v[0], v[1]); },
                    {random_tensor(s, rng), random_tensor(s, rng)}, rng);
  }});
  cases.push_back({"mul", [](Rng& rng, std::size_t) {
    const Shape s{pick(rng, 1, 8)};
    return check_op([](DTape&, const std::vector<DVar>& v) { return ad::mul(v[0], v[1]); },
                    {random_tensor(s, rng), random_tensor(s, rng)}, rng);
  }});
  cases.push_back({"scale", [](Rng& rng, std::size_t) {
    const double f = std::uniform_real_distribution<double>(-2, 2)(rng);
    return check_op([f](DTape&, const std::vector<DVar>& v) { return ad::scale(v[0], f); },
                    {random_tensor({pick(rng, 1, 8)}, rng)}, rng);
  }});
  cases.push_back({"relu", [](Rng& rng, std::size_t) {
    return check_op([](DTape&, const std::vector<DVar>& v) { return ad::relu(v[0]); },
                    {random_tensor({pick(rng, 2, 12)}, rng)}, rng);
  }});
  cases.push_back({"leaky_relu", [](Rng& rng, std::size_t) {
    return check_op([](DTape&, const std::vector<DVar>& v) { return ad::leaky_relu(v[0], 0.2); },
                    {random_tensor({pick(rng, 2, 12)}, rng)}, rng);
  }});
  cases.push_back({"exp", [](Rng& rng, std::size_t) {
    return check_op([](DTape&, const std::vector<DVar>& v) { return ad::exp(v[0]); },
                    {random_tensor({pick(rng, 1, 8)}, rng)}, rng);
  }});
  cases.push_back({"log", [](Rng& rng, std::size_t) {
    return check_op([](DTape&, const std::vector<DVar>& v) { return ad::log(v[0]); },
                    {random_tensor({pick(rng, 1, 8)}, rng, 0.5, 2.0)}, rng);
  }});
  cases.push_back({"sum", [](Rng& rng, std::size_t) {
    return check_op([](DTape&, const std::vector<DVar>& v) { return ad::sum(v[0]); },
                    {random_tensor({pick(rng, 1, 3), pick(rng, 1, 3)}, rng)}, rng);
  }});
  cases.push_back({"reshape_flatten", [](Rng& rng, std::size_t) {
    const std::size_t a = pick(rng, 1, 3), b = pick(rng, 1, 3), c = pick(rng, 1, 3);
    return check_op(
        [a, b, c](DTape&, const std::vector<DVar>& v) {
          return ad::reshape(ad::flatten(v[0]), Shape{a * b, c});
        },
        {random_tensor({a, b, c}, rng)}, rng);
  }});
  cases.push_back({"concat", [](Rng& rng, std::size_t seed) {
    if (seed % 2 == 0) {
      return check_op([](DTape&, const std::vector<DVar>& v) { return ad::concat(v, 0); },
                      {random_tensor({pick(rng, 1, 4)}, rng), random_tensor({pick(rng, 1, 4)}, rng)},
                      rng);
    }
    const std::size_t rows = pick(rng, 1, 3);
    return check_op([](DTape&, const std::vector<DVar>& v) { return ad::concat(v, 1); },
                    {random_tensor({rows, pick(rng, 1, 3)}, rng),
                     random_tensor({rows, pick(rng, 1, 3)}, rng)},
                    rng);
  }});
  cases.push_back({"slice_rows", [](Rng& rng, std::size_t) {
    const std::size_t rows = pick(rng, 2, 5);
    const std::size_t b = pick(rng, 0, rows - 1), e = pick(rng, b + 1, rows);
    return check_op([b, e](DTape&, const std::vector<DVar>& v) { return ad::slice_rows(v[0], b, e); },
                    {random_tensor({rows, pick(rng, 1, 4)}, rng)}, rng);
  }});
  cases.push_back({"mean_rows", [](Rng& rng, std::size_t) {
    return check_op([](DTape&, const std::vector<DVar>& v) { return ad::mean_rows(v[0]); },
                    {random_tensor({pick(rng, 1, 5), pick(rng, 1, 5)}, rng)}, rng);
  }});
  cases.push_back({"avg_pool2d", [](Rng& rng, std::size_t) {
    return check_op([](DTape&, const std::vector<DVar>& v) { return ad::avg_pool2d(v[0]); },
                    {random_tensor({pick(rng, 1, 3), 2 * pick(rng, 1, 3), 2 * pick(rng, 1, 3)}, rng)},
                    rng);
  }});
  cases.push_back({"adaptive_avg_pool2d", [](Rng& rng, std::size_t) {
    const std::size_t oh = pick(rng, 1, 4), ow = pick(rng, 1, 4);
    return check_op(
        [oh, ow](DTape&, const std::vector<DVar>& v) { return ad::adaptive_avg_pool2d(v[0], oh, ow); },
        {random_tensor({pick(rng, 1, 3), pick(rng, 3, 9), pick(rng, 3, 9)}, rng)}, rng);
  }});
  cases.push_back({"conv2d", [](Rng& rng, std::size_t seed) {
    const std::size_t c = pick(rng, 1, 3), o = pick(rng, 1, 3);
    const std::size_t stride = seed % 2 ? 2 : 1;
    return check_op(
        [stride](DTape&, const std::vector<DVar>& v) { return ad::conv2d(v[0], v[1], v[2], stride); },
        {random_tensor({c, pick(rng, 3, 7), pick(rng, 3, 7)}, rng), random_tensor({o, c, 3, 3}, rng),
         random_tensor({o}, rng)},
        rng);
  }});
  cases.push_back({"softmax_masked", [](Rng& rng, std::size_t seed) {
    const std::size_t rows = seed % 2 ? 1 : pick(rng, 2, 4);
    const std::size_t cols = pick(rng, 1, 8);
    std::vector<bool> mask(rows * cols);
    std::bernoulli_distribution coin(0.6);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < cols; ++j) mask[r * cols + j] = coin(rng);
      mask[r * cols + pick(rng, 0, cols - 1)] = true;
    }
    const Shape s = rows == 1 ? Shape{cols} : Shape{rows, cols};
    return check_op(
        [mask](DTape&, const std::vector<DVar>& v) { return ad::softmax_masked(v[0], mask); },
        {random_tensor(s, rng, -3.0, 3.0)}, rng);
  }});
  cases.push_back({"cross_entropy", [](Rng& rng, std::size_t) {
    const std::size_t b = pick(rng, 1, 6);
    std::vector<int> labels(b);
    for (auto& l : labels) l = static_cast<int>(pick(rng, 0, 1));
    return check_op(
        [labels](DTape&, const std::vector<DVar>& v) { return ad::cross_entropy(v[0], labels); },
        {random_tensor({b, 2}, rng, -3.0, 3.0)}, rng);
  }});
  cases.push_back({"linear", [](Rng& rng, std::size_t) {
    const std::size_t k = pick(rng, 1, 6), m = pick(rng, 1, 6);
    return check_op(
        [](DTape&, const std::vector<DVar>& v) { return ad::linear(v[0], v[1], v[2]); },
        {random_tensor({k}, rng), random_tensor({k, m}, rng), random_tensor({m}, rng)}, rng);
  }});
  return cases;
}

std::vector<NamedCase> composition_cases() {
  std::vector<NamedCase> cases;
  cases.push_back({"adapter.attention", [](Rng& rng, std::size_t seed) {
    const std::size_t n = pick(rng, 1, 6), d = pick(rng, 1, 4), dh = pick(rng, 1, 4);
    const EdgeMatrix e = build_edges({seed % 2 ? Topology::kDense : Topology::kStepByStep, n, true});
    const bool leaky = seed % 3 == 0;
    return check_op(
        [e, leaky](DTape&, const std::vector<DVar>& v) {
          return normalize_attention(attention_scores(v[0], GatHead<double>{v[1], v[2], v[3]}, e,
                                                      leaky, 0.2),
                                     e);
        },
        {random_tensor({n, d}, rng), random_tensor({d, dh}, rng), random_tensor({dh, 1}, rng),
         random_tensor({dh, 1}, rng)},
        rng);
  }});
  cases.push_back({"adapter.gat_layer", [](Rng& rng, std::size_t seed) {
    const std::size_t n = pick(rng, 2, 5), d = pick(rng, 1, 4), dh = pick(rng, 1, 3);
    const EdgeMatrix e = build_edges({seed % 2 ? Topology::kDense : Topology::kStepByStep, n, true});
    const HeadCombine combine = seed % 4 < 2 ? HeadCombine::kConcat : HeadCombine::kAverage;
    return check_op(
        [e, combine](DTape&, const std::vector<DVar>& v) {
          std::vector<GatHead<double>> heads = {{v[1], v[2], v[3]}, {v[4], v[5], v[6]}};
          return gat_layer(v[0], e, heads, combine);
        },
        {random_tensor({n, d}, rng), random_tensor({d, dh}, rng), random_tensor({dh, 1}, rng),
         random_tensor({dh, 1}, rng), random_tensor({d, dh}, rng), random_tensor({dh, 1}, rng),
         random_tensor({dh, 1}, rng)},
        rng);
  }});
  cases.push_back({"adapter.combine_latent", [](Rng& rng, std::size_t) {
    return check_op([](DTape&, const std::vector<DVar>& v) { return combine_latent(v[0]); },
                    {random_tensor({pick(rng, 2, 6), pick(rng, 1, 5)}, rng)}, rng);
  }});
  cases.push_back({"adapter.adapt", [](Rng& rng, std::size_t seed) {
    ModelConfig mc;
    mc.adapter = tiny_adapter(rng, seed);
    mc.detector = tiny_detector();
    ParamSet init;
    Rng init_rng(rng());
    init_adapter_params(init, mc.adapter, init_rng);
    const DParams params = jittered(init, rng);
    const Sample s = random_sample(mc, rng);
    const DTensor weights = random_tensor({mc.adapter.output_dim}, rng);
    auto value = [&](const DParams& p) {
      DTape t(&p);
      return ad::sum(ad::mul(adapt(t, s.features, mc.adapter), t.constant(weights))).value()[0];
    };
    DTape t(&params);
    t.backward(ad::sum(ad::mul(adapt(t, s.features, mc.adapter), t.constant(weights))));
    return check_params(params, value, t.param_grads(), rng);
  }});
  cases.push_back({"detector.detect_features", [](Rng& rng, std::size_t) {
    ModelConfig mc;
    mc.detector = tiny_detector();
    mc.use_adapter = false;
    const DParams params = jittered(init_model(mc, rng()), rng);
    const Sample s = random_sample(mc, rng);
    const DTensor weights = random_tensor({mc.detector.feature_dim}, rng);
    auto head = [&](DTape& t) {
      return ad::sum(ad::mul(detect_features(t, s.raw_input, mc.detector), t.constant(weights)));
    };
    DTape t(&params);
    t.backward(head(t));
    return check_params(params, [&](const DParams& p) { DTape tp(&p); return head(tp).value()[0]; },
                        t.param_grads(), rng);
  }});
  cases.push_back({"detector.classify", [](Rng& rng, std::size_t) {
    const std::size_t k = pick(rng, 2, 8);
    return check_op(
        [](DTape&, const std::vector<DVar>& v) { return ad::linear(v[0], v[1], v[2]); },
        {random_tensor({k}, rng), random_tensor({k, 2}, rng), random_tensor({2}, rng)}, rng);
  }});
  cases.push_back({"composed conv-relu-linear-ce", [](Rng& rng, std::size_t) {
    const std::size_t b = pick(rng, 1, 4), c = pick(rng, 1, 3), o = pick(rng, 1, 3);
    const std::size_t h = pick(rng, 3, 6), w = pick(rng, 3, 6);
    std::vector<DTensor> inputs;
    std::vector<int> labels;
    for (std::size_t j = 0; j < b; ++j) {
      inputs.push_back(random_tensor({c, h, w}, rng));
      labels.push_back(static_cast<int>(pick(rng, 0, 1)));
    }
    inputs.push_back(random_tensor({o, c, 3, 3}, rng));
    inputs.push_back(random_tensor({o}, rng));
    // 1/sqrt(fan_in) keeps the logits out of the saturated CE regime.
    const double lim = 1.0 / std::sqrt(static_cast<double>(o * h * w));
    inputs.push_back(random_tensor({o * h * w, 2}, rng, -lim, lim));
    inputs.push_back(random_tensor({2}, rng));
    return check_op(
        [b, labels](DTape&, const std::vector<DVar>& v) {
          std::vector<DVar> rows;
          for (std::size_t j = 0; j < b; ++j) {
            DVar x = ad::relu(ad::conv2d(v[j], v[b], v[b + 1], 1));
            x = ad::linear(ad::flatten(x), v[b + 2], v[b + 3]);
            rows.push_back(ad::reshape(x, Shape{1, 2}));
          }
          return ad::cross_entropy(ad::concat(rows, 0), labels);
        },
        inputs, rng);
  }});
  cases.push_back({"model.loss", [](Rng& rng, std::size_t seed) {
    ModelConfig mc;
    mc.adapter = tiny_adapter(rng, seed);
    mc.detector = tiny_detector();
    mc.use_adapter = seed % 5 != 4;
    const DParams params = jittered(init_model(mc, rng()), rng);
    std::vector<Sample> samples;
    for (std::size_t j = 0; j < 3; ++j) samples.push_back(random_sample(mc, rng));
    std::vector<const Sample*> batch;
    for (const auto& s : samples) batch.push_back(&s);
    DTape t(&params);
    std::vector<DVar> rows;
    std::vector<int> labels;
    for (const auto* s : batch) {
      rows.push_back(forward_logits(t, *s, mc));
      labels.push_back(label_index(s->label));
    }
    t.backward(ad::cross_entropy(ad::concat(rows, 0), labels));
    return check_params(params,
                        [&](const DParams& p) { return batch_loss_value<double>(p, batch, mc); },
                        t.param_grads(), rng);
  }});
  return cases;
}

}  // namespace

GradCheckReport run_gradcheck(std::size_t seeds, double tolerance) {
  const auto start = std::chrono::steady_clock::now();
  GradCheckReport report;
  auto cases = primitive_cases();
  auto more = composition_cases();
  cases.insert(cases.end(), more.begin(), more.end());
  for (std::size_t c = 0; c < cases.size(); ++c) {
    GradCheckCase result{cases[c].name, seeds, 0.0, tolerance};
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(1000003ULL * (c + 1) + s);
      result.max_rel_error = std::max(result.max_rel_error, cases[c].run(rng, s));
    }
    report.cases.push_back(result);
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace frtpad

#include "frtpad/detector.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <stdexcept>
#include <thread>

#include "frtpad/init.hpp"

namespace frtpad {

std::vector<LevelDims> FeatureStack::dims() const {
  std::vector<LevelDims> out;
  for (const auto& l : levels) {
    if (l.rank() != 3) throw ShapeError("feature level must be [c x h x w]");
    out.push_back({l.dim(0), l.dim(1), l.dim(2)});
  }
  return out;
}

void DetectorConfig::validate() const {
  if (input.channels == 0 || channels.empty() || feature_dim == 0) {
    throw std::invalid_argument("detector dims must be positive");
  }
  std::size_t h = input.height, w = input.width;
  for (std::size_t c : channels) {
    if (c == 0) throw std::invalid_argument("detector channel counts must be positive");
    if (h < 3 || w < 3 || h % 2 || w % 2) {
      throw std::invalid_argument("detector input " + shape_to_string(input.shape()) +
                                  " cannot pass through " + std::to_string(channels.size()) +
                                  " conv/pool blocks (needs even spatial dims >= 3 per block)");
    }
    h /= 2;
    w /= 2;
  }
}

void ModelConfig::validate() const {
  detector.validate();
  if (use_adapter) adapter.validate();
}

ParamSet init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ParamSet params;
  std::size_t in = config.detector.input.channels;
  for (std::size_t b = 0; b < config.detector.channels.size(); ++b) {
    const std::size_t out = config.detector.channels[b];
    const std::string base = "detector.conv" + std::to_string(b + 1);
    params.add(base + ".weight", glorot_uniform({out, in, 3, 3}, in * 9, out * 9, rng));
    params.add(base + ".bias", Tensor(Shape{out}));
    in = out;
  }
  const std::size_t fd = config.detector.feature_dim;
  params.add("detector.fc.weight", glorot_uniform({in, fd}, in, fd, rng));
  params.add("detector.fc.bias", Tensor(Shape{fd}));
  if (config.use_adapter) init_adapter_params(params, config.adapter, rng);
  const std::size_t fused = config.fused_dim();
  params.add("classifier.weight", glorot_uniform({fused, 2}, fused, 2, rng));
  params.add("classifier.bias", Tensor(Shape{2}));
  return params;
}

void check_param_layout(const ParamSet& params, const ModelConfig& config) {
  const ParamSet expected = init_model(config, 0);
  if (params.size() != expected.size()) {
    throw ShapeError("model has " + std::to_string(params.size()) + " parameter tensors, config expects " +
                     std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& want = expected.entry(i);
    const auto& got = params.entry(i);
    if (got.name != want.name || got.value.shape() != want.value.shape()) {
      throw ShapeError("parameter " + std::to_string(i) + " is " + got.name + " " +
                       shape_to_string(got.value.shape()) + ", config expects " + want.name + " " +
                       shape_to_string(want.value.shape()));
    }
  }
}

template <typename T>
ad::Var<T> detect_features(ad::Tape<T>& tape, const Tensor& raw_input, const DetectorConfig& config) {
  if (raw_input.shape() != config.input.shape()) {
    throw ShapeError("detect_features: input " + shape_to_string(raw_input.shape()) +
                     ", expected " + shape_to_string(config.input.shape()));
  }
  ad::Var<T> x = tape.constant(raw_input.template cast<T>());
  for (std::size_t b = 0; b < config.channels.size(); ++b) {
    const std::string base = "detector.conv" + std::to_string(b + 1);
    x = ad::conv2d(x, tape.param(base + ".weight"), tape.param(base + ".bias"), 1);
    x = ad::relu(x);
    x = ad::avg_pool2d(x);
  }
  x = ad::flatten(ad::adaptive_avg_pool2d(x, 1, 1));
  return ad::linear(x, tape.param("detector.fc.weight"), tape.param("detector.fc.bias"));
}

template <typename T>
ad::Var<T> fuse(ad::Var<T> pad_feature, ad::Var<T> face_feature) {
  return ad::concat<T>({pad_feature, face_feature}, 0);
}

template <typename T>
ad::Var<T> classify(ad::Tape<T>& tape, ad::Var<T> fused) {
  return ad::linear(fused, tape.param("classifier.weight"), tape.param("classifier.bias"));
}

template <typename T>
ad::Var<T> forward_logits(ad::Tape<T>& tape, const Sample& sample, const ModelConfig& config) {
  ad::Var<T> fused = detect_features(tape, sample.raw_input, config.detector);
  if (config.use_adapter) fused = fuse(fused, adapt(tape, sample.features, config.adapter));
  return ad::reshape(classify(tape, fused), Shape{1, 2});
}

namespace {

template <typename T>
double score_from_logits(std::span<const T> logits) {
  if (logits.size() != 2) throw ShapeError("bonafide_score: expected 2 logits");
  // softmax(z)[1] = 1 / (1 + exp(z0 - z1))
  const double d = static_cast<double>(logits[0]) - static_cast<double>(logits[1]);
  return 1.0 / (1.0 + std::exp(d));
}

}  // namespace

double bonafide_score(std::span<const float> logits) { return score_from_logits(logits); }
double bonafide_score(std::span<const double> logits) { return score_from_logits(logits); }

double binary_cross_entropy(std::span<const double> probs, std::span<const Label> labels) {
  if (probs.empty()) throw std::invalid_argument("binary_cross_entropy: empty batch");
  if (probs.size() != labels.size()) throw ShapeError("binary_cross_entropy: length mismatch");
  double total = 0.0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    const double y = labels[j] == Label::kBonafide ? 1.0 : 0.0;
    total += y * std::log(probs[j]) + (1.0 - y) * std::log(1.0 - probs[j]);
  }
  return -total / static_cast<double>(probs.size());
}

namespace {

struct SampleGrad {
  double loss = 0.0;
  GradientSet grads;
};

SampleGrad sample_grad(const ParamSet& params, const Sample& sample, const ModelConfig& config) {
  ad::FTape tape(&params);
  const ad::FVar logits = forward_logits(tape, sample, config);
  const ad::FVar loss = ad::cross_entropy(logits, {label_index(sample.label)});
  tape.backward(loss);
  return {static_cast<double>(loss.value()[0]), tape.param_grads()};
}

}  // namespace

BatchLoss batch_loss(const ParamSet& params, std::span<const Sample* const> batch,
                     const ModelConfig& config, std::size_t threads, bool ordered) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  const float inv_b = 1.0f / static_cast<float>(batch.size());
  BatchLoss out{0.0, GradientSet::zeros_like(params)};

  threads = std::max<std::size_t>(1, std::min(threads, batch.size()));
  if (threads == 1) {
    for (const Sample* s : batch) {
      SampleGrad g = sample_grad(params, *s, config);
      out.loss += g.loss;
      out.grads.accumulate(g.grads, inv_b);
    }
    out.loss /= static_cast<double>(batch.size());
    return out;
  }

  // Ordered: one slot per sample. Unordered: one running sum per worker.
  std::vector<SampleGrad> slots(ordered ? batch.size() : threads);
  if (!ordered) {
    for (auto& s : slots) s.grads = GradientSet::zeros_like(params);
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t j = t; j < batch.size(); j += threads) {
            SampleGrad g = sample_grad(params, *batch[j], config);
            if (ordered) {
              slots[j] = std::move(g);
            } else {
              slots[t].loss += g.loss;
              slots[t].grads.accumulate(g.grads);
            }
          }
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (const auto& g : slots) {
    out.loss += g.loss;
    out.grads.accumulate(g.grads, inv_b);
  }
  out.loss /= static_cast<double>(batch.size());
  return out;
}

template <typename T>
T batch_loss_value(const BasicParamSet<T>& params, std::span<const Sample* const> batch,
                   const ModelConfig& config) {
  if (batch.empty()) throw std::invalid_argument("batch_loss_value: empty batch");
  T total = 0;
  for (const Sample* s : batch) {
    ad::Tape<T> tape(&params);
    const ad::Var<T> logits = forward_logits(tape, *s, config);
    total += ad::cross_entropy(logits, {label_index(s->label)}).value()[0];
  }
  return total / static_cast<T>(batch.size());
}

#define FRTPAD_INSTANTIATE_DETECTOR(T)                                                         \
  template ad::Var<T> detect_features(ad::Tape<T>&, const Tensor&, const DetectorConfig&);     \
  template ad::Var<T> fuse(ad::Var<T>, ad::Var<T>);                                            \
  template ad::Var<T> classify(ad::Tape<T>&, ad::Var<T>);                                      \
  template ad::Var<T> forward_logits(ad::Tape<T>&, const Sample&, const ModelConfig&);         \
  template T batch_loss_value(const BasicParamSet<T>&, std::span<const Sample* const>,         \
                              const ModelConfig&);

FRTPAD_INSTANTIATE_DETECTOR(float)
FRTPAD_INSTANTIATE_DETECTOR(double)

}  // namespace frtpad

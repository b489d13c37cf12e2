#pragma once

// Main branch (CNN presentation-attack detector), feature fusion, the
// two-way classifier and the batch training loss.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "frtpad/adapter.hpp"
#include "frtpad/autodiff.hpp"
#include "frtpad/sample.hpp"

namespace frtpad {

struct DetectorConfig {
  LevelDims input = {3, 32, 32};
  // One [conv3x3 -> relu -> 2x2 avg pool] block per entry.
  std::vector<std::size_t> channels = {8, 16, 32};
  std::size_t feature_dim = 64;

  void validate() const;
};

struct ModelConfig {
  DetectorConfig detector;
  AdapterConfig adapter;
  bool use_adapter = true;

  [[nodiscard]] std::size_t fused_dim() const {
    return detector.feature_dim + (use_adapter ? adapter.output_dim : 0);
  }
  void validate() const;
};

// Fresh parameters: detector.*, adapter.* (when enabled), classifier.*.
ParamSet init_model(const ModelConfig& config, std::uint64_t seed);

// Throws ShapeError unless `params` has exactly the names and shapes
// init_model(config) produces.
void check_param_layout(const ParamSet& params, const ModelConfig& config);

// Raw input [c x h x w] -> f_p [feature_dim].
template <typename T>
ad::Var<T> detect_features(ad::Tape<T>& tape, const Tensor& raw_input, const DetectorConfig& config);

// f_h = concat(f_p, f_t).
template <typename T>
ad::Var<T> fuse(ad::Var<T> pad_feature, ad::Var<T> face_feature);

// f_h -> logits [2] (attack, bona fide).
template <typename T>
ad::Var<T> classify(ad::Tape<T>& tape, ad::Var<T> fused);

// Full forward pass for one sample; logits [1 x 2]. With the adapter off the
// classifier sees f_p alone.
template <typename T>
ad::Var<T> forward_logits(ad::Tape<T>& tape, const Sample& sample, const ModelConfig& config);

// softmax(logits)[bona fide].
double bonafide_score(std::span<const float> logits);
double bonafide_score(std::span<const double> logits);

// -1/N sum [y log p + (1 - y) log(1 - p)] over predicted bona-fide
// probabilities p and labels y.
double binary_cross_entropy(std::span<const double> probs, std::span<const Label> labels);

struct BatchLoss {
  double loss = 0.0;
  GradientSet grads;
};

// Mean cross-entropy of the batch and its gradient w.r.t. every trainable
// parameter. Each sample is differentiated on its own tape. With `ordered`
// the per-sample gradients are reduced in batch order, so the result does
// not depend on `threads`; otherwise each worker sums its own share first.
BatchLoss batch_loss(const ParamSet& params, std::span<const Sample* const> batch,
                     const ModelConfig& config, std::size_t threads = 1, bool ordered = true);

// Loss value only, in precision T (used by the finite-difference checker).
template <typename T>
T batch_loss_value(const BasicParamSet<T>& params, std::span<const Sample* const> batch,
                   const ModelConfig& config);

}  // namespace frtpad

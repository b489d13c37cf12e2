#pragma once

// Training loop: seeded epoch shuffling, mini-batch cross-entropy, Adam.
// Frozen feature stacks are read, never written.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "frtpad/detector.hpp"
#include "frtpad/metrics.hpp"
#include "frtpad/optim.hpp"

namespace frtpad {

struct TrainConfig {
  ModelConfig model;
  AdamConfig adam;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  // Per-sample gradients are reduced in batch order, so results do not
  // depend on `threads`. When false, each worker reduces its own share
  // first: faster to merge but the rounding then depends on `threads`.
  bool deterministic = true;
  std::size_t threads = 1;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean over the epoch's batches, weighted by batch size
  std::optional<MetricReport> validation;
  double seconds = 0.0;

  [[nodiscard]] nlohmann::json to_json() const;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0.0;

  // One JSON object per epoch, newline separated.
  [[nodiscard]] std::string to_jsonl() const;
  // Losses and validation metrics equal; timings ignored.
  [[nodiscard]] bool same_trajectory(const TrainLog& other) const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  ParamSet params;
  TrainLog log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Initializes parameters from config.seed and trains for config.epochs.
TrainResult train(const TrainConfig& config, const Dataset& train_set,
                  const Dataset* validation = nullptr, const EpochCallback& on_epoch = {});

// Continues from existing parameters.
TrainResult train_from(ParamSet params, const TrainConfig& config, const Dataset& train_set,
                       const Dataset* validation = nullptr, const EpochCallback& on_epoch = {});

// Bona-fide probability per sample, in dataset order.
std::vector<double> predict_scores(const ParamSet& params, const ModelConfig& config,
                                   const Dataset& data, std::size_t threads = 1);

ScoreSet score_set(const std::vector<double>& scores, const Dataset& data);

// FNV-1a over every feature tensor's bytes and shape, in dataset order.
std::uint64_t feature_hash(const Dataset& data);

}  // namespace frtpad

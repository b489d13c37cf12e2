#include "frtpad/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <exception>
#include <numeric>
#include <thread>

#include "frtpad/init.hpp"

namespace frtpad {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Names the first parameter or gradient that went non-finite.
std::string non_finite_report(const ParamSet& params, const GradientSet& grads) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.entry(i).value.all_finite()) return "parameter " + params.entry(i).name + " is non-finite";
    if (grads.has(i) && !grads.at(i).all_finite()) {
      return "gradient of " + params.entry(i).name + " is non-finite";
    }
  }
  return "all parameters and gradients finite";
}

bool same_report(const std::optional<MetricReport>& a, const std::optional<MetricReport>& b) {
  if (a.has_value() != b.has_value()) return false;
  if (!a) return true;
  return a->threshold == b->threshold && a->hter == b->hter && a->auc == b->auc &&
         a->bpcer_at_apcer1 == b->bpcer_at_apcer1;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (!(adam.lr > 0.0f) || !std::isfinite(adam.lr)) throw std::invalid_argument("lr must be > 0");
  if (adam.weight_decay < 0.0f) throw std::invalid_argument("weight_decay must be >= 0");
  if (adam.beta1 < 0.0f || adam.beta1 >= 1.0f || adam.beta2 < 0.0f || adam.beta2 >= 1.0f) {
    throw std::invalid_argument("beta1 and beta2 must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0f)) throw std::invalid_argument("eps must be > 0");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (threads == 0) throw std::invalid_argument("threads must be >= 1");
}

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json j = {{"epoch", epoch}, {"loss", loss}, {"seconds", seconds}};
  if (validation) j["validation"] = validation->to_json();
  return j;
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) out += e.to_json().dump() + "\n";
  return out;
}

bool TrainLog::same_trajectory(const TrainLog& other) const {
  if (epochs.size() != other.epochs.size()) return false;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto &a = epochs[i], &b = other.epochs[i];
    if (a.epoch != b.epoch || a.loss != b.loss || !same_report(a.validation, b.validation)) return false;
  }
  return true;
}

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset* validation,
                  const EpochCallback& on_epoch) {
  config.validate();
  return train_from(init_model(config.model, config.seed), config, train_set, validation, on_epoch);
}

TrainResult train_from(ParamSet params, const TrainConfig& config, const Dataset& train_set,
                       const Dataset* validation, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw TrainingError("training set is empty");
  check_param_layout(params, config.model);
  const auto t_start = Clock::now();

  // Shuffling draws from its own stream so it does not depend on how many
  // values parameter initialization consumed.
  Rng shuffle_rng(config.seed ^ 0xA5A5A5A5DEADBEEFULL);
  AdamState state;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<const Sample*> batch;

  TrainLog log;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t_epoch = Clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double total = 0.0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += config.batch_size, ++b) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t k = start; k < stop; ++k) batch.push_back(&train_set[order[k]]);
      BatchLoss bl = batch_loss(params, batch, config.model, config.threads, config.deterministic);
      if (!std::isfinite(bl.loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(b) + ": " + non_finite_report(params, bl.grads));
      }
      adam_step(params, bl.grads, config.adam, state);
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params.entry(i).value.all_finite()) {
          throw TrainingError("non-finite update at epoch " + std::to_string(epoch) + " batch " +
                              std::to_string(b) + ": " + non_finite_report(params, bl.grads));
        }
      }
      total += bl.loss * static_cast<double>(batch.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = total / static_cast<double>(train_set.size());
    if (validation && !validation->empty()) {
      const ScoreSet s = score_set(predict_scores(params, config.model, *validation, config.threads),
                                   *validation);
      if (s.bonafide_count() > 0 && s.attack_count() > 0) rec.validation = evaluate(s);
    }
    rec.seconds = seconds_since(t_epoch);
    if (on_epoch) on_epoch(rec);
    log.epochs.push_back(std::move(rec));
  }
  log.wall_seconds = seconds_since(t_start);
  return {std::move(params), std::move(log)};
}

std::vector<double> predict_scores(const ParamSet& params, const ModelConfig& config,
                                   const Dataset& data, std::size_t threads) {
  check_param_layout(params, config);
  std::vector<double> scores(data.size());
  auto score_one = [&](std::size_t j) {
    ad::FTape tape(&params);
    const ad::FVar logits = forward_logits(tape, data[j], config);
    scores[j] = bonafide_score(logits.value().data());
  };
  threads = std::max<std::size_t>(1, std::min(threads, data.size()));
  if (threads == 1) {
    for (std::size_t j = 0; j < data.size(); ++j) score_one(j);
    return scores;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t j = t; j < data.size(); j += threads) score_one(j);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return scores;
}

ScoreSet score_set(const std::vector<double>& scores, const Dataset& data) {
  if (scores.size() != data.size()) throw ShapeError("score_set: score/sample count mismatch");
  ScoreSet s;
  s.scores = scores;
  for (const auto& x : data) s.labels.push_back(x.label);
  return s;
}

std::uint64_t feature_hash(const Dataset& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& s : data) {
    for (const auto& t : s.features.levels) {
      for (std::size_t d : t.shape()) mix(&d, sizeof d);
      const auto v = t.data();
      mix(v.data(), v.size_bytes());
    }
  }
  return h;
}

}  // namespace frtpad

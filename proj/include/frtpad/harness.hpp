#pragma once

// Cross-dataset protocols. Protocol I trains on every registered dataset
// but one and tests on the held-out one; Protocol II trains on a named
// pair and tests on the remaining datasets pooled together.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "frtpad/config.hpp"
#include "frtpad/metrics.hpp"
#include "frtpad/synthetic.hpp"
#include "frtpad/trainer.hpp"

namespace frtpad {

// Exactly one of the two is set.
struct DatasetSource {
  std::optional<std::filesystem::path> container;
  std::optional<SynthSpec> synth;
};

struct MethodSpec {
  std::string name;
  bool use_adapter = true;
  Topology topology = Topology::kStepByStep;
};

// Baseline (adapter off), step-by-step graph, dense graph.
std::vector<MethodSpec> default_methods();

enum class ProtocolMode { kI, kII };

struct ProtocolSpec {
  std::map<std::string, DatasetSource> registry;
  ProtocolMode mode = ProtocolMode::kII;
  // Protocol I: dataset id to hold out, or "all" for one row per id.
  std::string heldout = "all";
  // Protocol II: the training pair; the complement is the test pool.
  std::vector<std::string> train_ids;
  // Protocol II: also run complement -> pair.
  bool both_directions = true;
  std::vector<MethodSpec> methods = default_methods();
  TrainConfig train;
};

// Relative container paths resolve against `base_dir`. A string
// "registry" names a registry file; its paths resolve against its own
// directory.
ProtocolSpec protocol_spec_from_json(const json& j, const std::filesystem::path& base_dir);

// {"datasets": {id: {"container": path} | {"synth": {...}}}}
std::map<std::string, DatasetSource> registry_from_json(const json& j, const std::string& path,
                                                        const std::filesystem::path& base_dir);
json to_json(const DatasetSource& s);

struct Split {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

// Throws ConfigError on unknown ids or an invalid split.
std::vector<Split> protocol_splits(const ProtocolSpec& spec);

// Loads one registered dataset; every sample carries dataset_id == id.
Dataset load_dataset(const std::string& id, const DatasetSource& source);

struct ResultsRow {
  std::string method;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  double hter_pct = 0.0;
  double auc_pct = 0.0;
  double bpcer_pct = 0.0;  // at APCER = 1%
  double threshold = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;

  [[nodiscard]] json to_json() const;
  friend bool operator==(const ResultsRow&, const ResultsRow&) = default;
};

struct RowOutput {
  ResultsRow row;
  json config;  // exactly what config_hash covers
  std::vector<ScoreRow> scores;
  RocCurve roc;
  TrainLog log;
};

struct ProtocolResult {
  std::vector<RowOutput> rows;
};

using RowCallback = std::function<void(const RowOutput&)>;

ProtocolResult run_protocol(const ProtocolSpec& spec, const RowCallback& on_row = {});

// Re-runs one row from its recorded config (configs/<tag>.json); the
// result reproduces the original row.
RowOutput replay_row(const json& config, const std::filesystem::path& base_dir = {});

// "Train,Test,Method,HTER(%)↓,AUC(%)↑,BPCER(%)↓,seed,config_hash" with
// dataset lists written as [A,B].
std::string results_csv(const std::vector<ResultsRow>& rows);
json results_json(const std::vector<ResultsRow>& rows);

// results.json, results.csv, and per row: scores/<tag>.csv,
// roc/<tag>.csv, logs/<tag>.jsonl, configs/<tag>.json.
void write_protocol_outputs(const std::filesystem::path& dir, const ProtocolResult& result);

std::string row_tag(const ResultsRow& row);

}  // namespace frtpad

#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "frtpad/config.hpp"
#include "frtpad/container.hpp"
#include "frtpad/harness.hpp"
#include "helpers.hpp"

using namespace frtpad;
using frtpad::testing::small_model;

namespace {

std::string config_error_path(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.key_path();
  }
  return "<no error>";
}

SynthSpec tiny_synth(std::uint64_t seed) {
  const auto m = small_model();
  auto s = frtpad::testing::small_synth(m, 4, seed);
  return s;
}

ProtocolSpec tiny_protocol(ProtocolMode mode) {
  ProtocolSpec spec;
  for (const char* id : {"A", "B", "C", "D"})
    spec.registry[id] = DatasetSource{std::nullopt, tiny_synth(static_cast<std::uint64_t>(id[0]))};
  spec.mode = mode;
  spec.train_ids = {"B", "A"};
  spec.train.model = small_model();
  spec.train.epochs = 1;
  spec.train.batch_size = 8;
  return spec;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config structs round trip through json") {
  TrainConfig c;
  c.model = small_model(true, Topology::kDense);
  c.model.adapter.leaky_scores = true;
  c.adam.lr = 3e-4f;
  c.epochs = 7;
  c.seed = 12345678901234ull;
  c.deterministic = false;
  const auto back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.model.adapter.topology == Topology::kDense);
  CHECK(back.adam.lr == 3e-4f);
  CHECK(back.seed == 12345678901234ull);

  SynthSpec s;
  s.raw_pattern_seed = 5;
  s.domain_shift = {0, 1, 2, 3, 4};
  s.signal_target = SignalTarget::kFeaturesOnly;
  CHECK(to_json(synth_spec_from_json(to_json(s))) == to_json(s));
}

TEST_CASE("partial documents override defaults") {
  const auto c = train_config_from_json(json::parse(R"({"epochs": 3, "model": {"use_adapter": false}})"));
  CHECK(c.epochs == 3);
  CHECK_FALSE(c.model.use_adapter);
  CHECK(c.batch_size == 32);
  CHECK(c.adam.lr == 1e-4f);
  CHECK(c.adam.weight_decay == 5e-5f);
}

TEST_CASE("config errors carry key paths") {
  CHECK(config_error_path([] { train_config_from_json(json::parse(R"({"epoch": 3})"), "train"); }) ==
        "train.epoch");
  CHECK(config_error_path([] {
          train_config_from_json(json::parse(R"({"model": {"adapter": {"heads": "two"}}})"), "train");
        }) == "train.model.adapter.heads");
  CHECK(config_error_path([] {
          train_config_from_json(json::parse(R"({"model": {"adapter": {"topology": "ring"}}})"), "train");
        }) == "train.model.adapter.topology");
  CHECK(config_error_path([] { train_config_from_json(json::parse(R"({"batch_size": -1})")); }) == "batch_size");
  CHECK(config_error_path([] { train_config_from_json(json::parse(R"({"lr": 0})")); }) != "<no error>");
  CHECK(config_error_path([] {
          synth_spec_from_json(json::parse(R"({"levels": [{"channels": 4, "height": 2}]})"), "synth");
        }).starts_with("synth.levels"));
  CHECK(config_error_path([] { train_config_from_json(json::parse("[1, 2]"), "train"); }) == "train");

  try {
    train_config_from_json(json::parse(R"({"model": {"detector": {"feature_dimm": 3}}})"), "train");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()) == "train.model.detector.feature_dimm: unknown key");
  }
}

TEST_CASE("config hash is stable and key order independent") {
  const json a = json::parse(R"({"x": 1, "y": [1, 2]})");
  const json b = json::parse(R"({"y": [1, 2], "x": 1})");
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a) != config_hash(json::parse(R"({"x": 2, "y": [1, 2]})")));
  CHECK(hex64(0x1234abcdull) == "000000001234abcd");
}

TEST_CASE("protocol II splits are the named pair and its complement") {
  auto spec = tiny_protocol(ProtocolMode::kII);
  auto splits = protocol_splits(spec);
  REQUIRE(splits.size() == 2);
  CHECK(splits[0].train_ids == std::vector<std::string>{"A", "B"});
  CHECK(splits[0].test_ids == std::vector<std::string>{"C", "D"});
  CHECK(splits[1].train_ids == std::vector<std::string>{"C", "D"});
  CHECK(splits[1].test_ids == std::vector<std::string>{"A", "B"});
  spec.both_directions = false;
  CHECK(protocol_splits(spec).size() == 1);

  spec.train_ids = {"A", "Z"};
  CHECK(config_error_path([&] { protocol_splits(spec); }) == "mode.train");
  spec.train_ids = {"A", "A"};
  CHECK(config_error_path([&] { protocol_splits(spec); }) == "mode.train");
  spec.train_ids = {"A", "B", "C"};
  CHECK(config_error_path([&] { protocol_splits(spec); }) == "mode.train");
}

TEST_CASE("protocol I holds out each dataset in turn") {
  auto spec = tiny_protocol(ProtocolMode::kI);
  const auto splits = protocol_splits(spec);
  REQUIRE(splits.size() == 4);
  for (const auto& s : splits) {
    CHECK(s.test_ids.size() == 1);
    CHECK(s.train_ids.size() == 3);
    CHECK(std::find(s.train_ids.begin(), s.train_ids.end(), s.test_ids[0]) == s.train_ids.end());
  }
  spec.heldout = "C";
  CHECK(protocol_splits(spec).size() == 1);
  spec.heldout = "Q";
  CHECK(config_error_path([&] { protocol_splits(spec); }) == "mode.heldout");
}

TEST_CASE("protocol spec parsing") {
  const auto j = json::parse(R"({
    "registry": {"datasets": {
      "O": {"synth": {"per_class": 3, "seed": 1}},
      "C": {"synth": {"per_class": 3, "seed": 2}},
      "I": {"container": "data/I.fstk"}}},
    "mode": {"protocol": "I", "heldout": "O"},
    "methods": [{"name": "Baseline", "use_adapter": false}],
    "train": {"epochs": 2}
  })");
  const auto spec = protocol_spec_from_json(j, "/base");
  CHECK(spec.mode == ProtocolMode::kI);
  CHECK(spec.heldout == "O");
  CHECK(spec.methods.size() == 1);
  CHECK(spec.train.epochs == 2);
  CHECK(spec.registry.at("I").container.value() == std::filesystem::path("/base/data/I.fstk"));
  CHECK(spec.registry.at("O").synth->per_class == 3);

  auto bad = j;
  bad["mode"]["heldout"] = "X";
  CHECK(config_error_path([&] { protocol_spec_from_json(bad, "/base"); }) == "mode.heldout");
  bad = j;
  bad["registry"]["datasets"]["O"]["synth"]["per_clas"] = 3;
  CHECK(config_error_path([&] { protocol_spec_from_json(bad, "/base"); }).ends_with("per_clas"));
  bad = j;
  bad["mode"] = {{"protocol", "III"}};
  CHECK(config_error_path([&] { protocol_spec_from_json(bad, "/base"); }) == "mode.protocol");
  bad = j;
  bad["surprise"] = 1;
  CHECK(config_error_path([&] { protocol_spec_from_json(bad, "/base"); }) == "surprise");
  CHECK(default_methods().size() == 3);
}

TEST_CASE("run_protocol: rows, disjointness, determinism and replay") {
  const auto spec = tiny_protocol(ProtocolMode::kII);
  std::size_t callbacks = 0;
  const auto a = run_protocol(spec, [&](const RowOutput&) { ++callbacks; });
  REQUIRE(a.rows.size() == 6);
  CHECK(callbacks == 6);
  for (const auto& r : a.rows) {
    CHECK(r.scores.size() == 16);
    for (const auto& s : r.scores) {
      CHECK(std::find(r.row.train_ids.begin(), r.row.train_ids.end(), s.dataset_id) == r.row.train_ids.end());
      CHECK(s.sample_id.starts_with(s.dataset_id + "/"));
    }
    CHECK(r.row.hter_pct >= 0.0);
    CHECK(r.row.hter_pct <= 100.0);
    CHECK(r.row.auc_pct >= 0.0);
    CHECK(r.row.auc_pct <= 100.0);
    CHECK(r.row.bpcer_pct >= 0.0);
    CHECK(r.row.bpcer_pct <= 100.0);
    CHECK(r.row.config_hash == hex64(config_hash(r.config)));
    CHECK(r.log.epochs.size() == 1);
  }
  CHECK(a.rows[0].row.method == "Baseline");
  CHECK(a.rows[0].row.test_ids == std::vector<std::string>{"C", "D"});
  CHECK(a.rows[3].row.test_ids == std::vector<std::string>{"A", "B"});

  const auto b = run_protocol(spec);
  for (std::size_t i = 0; i < a.rows.size(); ++i) CHECK(a.rows[i].row == b.rows[i].row);

  auto threaded = spec;
  threaded.train.threads = 2;
  const auto t = run_protocol(threaded);
  for (std::size_t i = 0; i < a.rows.size(); ++i) CHECK(a.rows[i].row == t.rows[i].row);

  const auto replayed = replay_row(json::parse(a.rows[4].config.dump()));
  CHECK(replayed.row == a.rows[4].row);
}

TEST_CASE("container-backed datasets and output files") {
  const auto dir = std::filesystem::temp_directory_path() / "frtpad_test_harness";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  ProtocolSpec spec = tiny_protocol(ProtocolMode::kI);
  spec.heldout = "D";
  spec.methods = {{"Baseline", false, Topology::kStepByStep}};
  for (const char* id : {"A", "B", "C", "D"}) {
    auto s = *spec.registry[id].synth;
    s.dataset_id = id;
    write_container(dir / (std::string(id) + ".fstk"), generate_synthetic(s));
  }
  ProtocolSpec from_files = spec;
  for (const char* id : {"A", "B", "C", "D"})
    from_files.registry[id] = DatasetSource{dir / (std::string(id) + ".fstk"), std::nullopt};

  const auto synth_rows = run_protocol(spec);
  const auto file_rows = run_protocol(from_files);
  REQUIRE(file_rows.rows.size() == 1);
  CHECK(file_rows.rows[0].row.hter_pct == synth_rows.rows[0].row.hter_pct);
  CHECK(file_rows.rows[0].row.auc_pct == synth_rows.rows[0].row.auc_pct);

  // A container registered under the wrong id is rejected.
  CHECK_THROWS(load_dataset("B", DatasetSource{dir / "A.fstk", std::nullopt}));

  write_protocol_outputs(dir / "out", file_rows);
  const auto tag = row_tag(file_rows.rows[0].row);
  CHECK(tag == "ABC_to_D__Baseline");
  for (const char* sub : {"scores", "roc", "configs"}) CHECK(std::filesystem::exists(dir / "out" / sub));
  CHECK(std::filesystem::exists(dir / "out" / "logs" / (tag + ".jsonl")));
  const auto csv = read_text(dir / "out" / "results.csv");
  CHECK(csv.starts_with("Train,Test,Method,HTER(%)\xE2\x86\x93,AUC(%)\xE2\x86\x91,BPCER(%)\xE2\x86\x93,seed,config_hash\n"));
  CHECK(csv.find("\"[A,B,C]\",\"[D]\",\"Baseline\"") != std::string::npos);
  const auto results = load_json_file(dir / "out" / "results.json");
  CHECK(results["rows"].size() == 1);
  CHECK(results["rows"][0]["config_hash"] == file_rows.rows[0].row.config_hash);

  const auto replayed = replay_row(load_json_file(dir / "out" / "configs" / (tag + ".json")));
  CHECK(replayed.row == file_rows.rows[0].row);
  std::filesystem::remove_all(dir);
}

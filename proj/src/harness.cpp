#include "frtpad/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>

#include "frtpad/container.hpp"

namespace frtpad {

namespace {

std::string join_path(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

std::string bracket(const std::vector<std::string>& ids) {
  std::string out = "[";
  for (std::size_t i = 0; i < ids.size(); ++i) out += (i ? "," : "") + ids[i];
  return out + "]";
}

void require_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }) ==
        allowed.end()) {
      throw ConfigError(join_path(path, k), "unknown key");
    }
  }
}

std::string get_string(const json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path, "expected a string");
  return j.get<std::string>();
}

std::vector<std::string> get_ids(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array of dataset ids");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(get_string(j[i], path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + file.string());
}

double pct(double v) { return 100.0 * v; }

}  // namespace

std::vector<MethodSpec> default_methods() {
  return {{"Baseline", false, Topology::kStepByStep},
          {"FRT-PAD w/ Step-by-Step Graph", true, Topology::kStepByStep},
          {"FRT-PAD w/ Dense Graph", true, Topology::kDense}};
}

std::map<std::string, DatasetSource> registry_from_json(const json& j, const std::string& path,
                                                        const std::filesystem::path& base_dir) {
  require_keys(j, path, {"datasets"});
  const std::string dpath = join_path(path, "datasets");
  if (!j.contains("datasets") || !j["datasets"].is_object()) {
    throw ConfigError(dpath, "expected an object mapping dataset id to a source");
  }
  std::map<std::string, DatasetSource> out;
  for (const auto& [id, src] : j["datasets"].items()) {
    const std::string p = join_path(dpath, id);
    if (id.empty()) throw ConfigError(p, "dataset id must be non-empty");
    require_keys(src, p, {"container", "synth"});
    DatasetSource s;
    if (src.contains("container") == src.contains("synth")) {
      throw ConfigError(p, "give exactly one of \"container\" or \"synth\"");
    }
    if (src.contains("container")) {
      std::filesystem::path file = get_string(src["container"], join_path(p, "container"));
      s.container = std::filesystem::absolute(file.is_absolute() ? file : base_dir / file).lexically_normal();
    } else {
      SynthSpec base;
      base.dataset_id = id;
      s.synth = synth_spec_from_json(src["synth"], join_path(p, "synth"), base);
      s.synth->dataset_id = id;
    }
    out.emplace(id, std::move(s));
  }
  if (out.empty()) throw ConfigError(dpath, "registry is empty");
  return out;
}

json to_json(const DatasetSource& s) {
  if (s.container) return {{"container", s.container->string()}};
  return {{"synth", to_json(*s.synth)}};
}

ProtocolSpec protocol_spec_from_json(const json& j, const std::filesystem::path& base_dir) {
  require_keys(j, "", {"registry", "mode", "methods", "train"});
  ProtocolSpec spec;
  if (!j.contains("registry")) throw ConfigError("registry", "missing");
  if (j["registry"].is_string()) {
    std::filesystem::path file = j["registry"].get<std::string>();
    if (!file.is_absolute()) file = base_dir / file;
    json reg;
    try {
      reg = load_json_file(file);
    } catch (const ConfigError& e) {
      throw ConfigError("registry", e.what());
    }
    spec.registry = registry_from_json(reg, "registry", file.parent_path());
  } else {
    spec.registry = registry_from_json(j["registry"], "registry", base_dir);
  }

  if (!j.contains("mode")) throw ConfigError("mode", "missing");
  const json& m = j["mode"];
  require_keys(m, "mode", {"protocol", "heldout", "train", "both_directions"});
  const std::string proto = m.contains("protocol") ? get_string(m["protocol"], "mode.protocol") : "";
  if (proto == "I") {
    spec.mode = ProtocolMode::kI;
    if (m.contains("heldout")) spec.heldout = get_string(m["heldout"], "mode.heldout");
    if (m.contains("train") || m.contains("both_directions")) {
      throw ConfigError("mode", "protocol I takes only \"heldout\"");
    }
  } else if (proto == "II") {
    spec.mode = ProtocolMode::kII;
    if (!m.contains("train")) throw ConfigError("mode.train", "missing");
    spec.train_ids = get_ids(m["train"], "mode.train");
    if (m.contains("both_directions")) {
      if (!m["both_directions"].is_boolean()) throw ConfigError("mode.both_directions", "expected true or false");
      spec.both_directions = m["both_directions"].get<bool>();
    }
    if (m.contains("heldout")) throw ConfigError("mode.heldout", "only valid for protocol I");
  } else {
    throw ConfigError("mode.protocol", "expected \"I\" or \"II\"");
  }

  if (j.contains("methods")) {
    const json& ms = j["methods"];
    if (!ms.is_array() || ms.empty()) throw ConfigError("methods", "expected a non-empty array");
    spec.methods.clear();
    for (std::size_t i = 0; i < ms.size(); ++i) {
      const std::string p = "methods[" + std::to_string(i) + "]";
      require_keys(ms[i], p, {"name", "use_adapter", "topology"});
      MethodSpec method;
      if (!ms[i].contains("name")) throw ConfigError(p + ".name", "missing");
      method.name = get_string(ms[i]["name"], p + ".name");
      if (ms[i].contains("use_adapter")) {
        if (!ms[i]["use_adapter"].is_boolean()) throw ConfigError(p + ".use_adapter", "expected true or false");
        method.use_adapter = ms[i]["use_adapter"].get<bool>();
      }
      if (ms[i].contains("topology")) {
        try {
          method.topology = topology_from_string(get_string(ms[i]["topology"], p + ".topology"));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(p + ".topology", e.what());
        }
      }
      spec.methods.push_back(std::move(method));
    }
  }
  if (j.contains("train")) spec.train = train_config_from_json(j["train"], "train");
  protocol_splits(spec);
  return spec;
}

std::vector<Split> protocol_splits(const ProtocolSpec& spec) {
  std::vector<std::string> ids;
  for (const auto& [id, src] : spec.registry) ids.push_back(id);
  if (ids.size() < 2) throw ConfigError("registry", "protocols need at least 2 datasets");
  auto complement = [&](const std::vector<std::string>& chosen) {
    std::vector<std::string> out;
    for (const auto& id : ids) {
      if (std::find(chosen.begin(), chosen.end(), id) == chosen.end()) out.push_back(id);
    }
    return out;
  };

  std::vector<Split> splits;
  if (spec.mode == ProtocolMode::kI) {
    std::vector<std::string> held;
    if (spec.heldout == "all") {
      held = ids;
    } else {
      if (!spec.registry.contains(spec.heldout)) {
        throw ConfigError("mode.heldout", "unknown dataset id '" + spec.heldout + "'");
      }
      held = {spec.heldout};
    }
    for (const auto& h : held) splits.push_back({complement({h}), {h}});
  } else {
    std::set<std::string> seen;
    for (const auto& id : spec.train_ids) {
      if (!spec.registry.contains(id)) throw ConfigError("mode.train", "unknown dataset id '" + id + "'");
      if (!seen.insert(id).second) throw ConfigError("mode.train", "dataset id '" + id + "' repeated");
    }
    if (spec.train_ids.size() != 2) throw ConfigError("mode.train", "protocol II trains on exactly 2 datasets");
    std::vector<std::string> train = spec.train_ids;
    std::sort(train.begin(), train.end());
    const std::vector<std::string> test = complement(train);
    if (test.empty()) throw ConfigError("mode.train", "no datasets left to test on");
    splits.push_back({train, test});
    if (spec.both_directions) splits.push_back({test, train});
  }
  for (const auto& s : splits) {
    for (const auto& id : s.test_ids) {
      if (std::find(s.train_ids.begin(), s.train_ids.end(), id) != s.train_ids.end()) {
        throw ConfigError("mode", "dataset '" + id + "' is in both train and test");
      }
    }
  }
  return splits;
}

Dataset load_dataset(const std::string& id, const DatasetSource& source) {
  if (source.synth) {
    SynthSpec s = *source.synth;
    s.dataset_id = id;
    return generate_synthetic(s);
  }
  if (!source.container) throw std::invalid_argument("dataset '" + id + "' has no source");
  Container c = read_container(*source.container);
  for (const auto& x : c.samples) {
    if (x.dataset_id != id) {
      throw std::invalid_argument("container " + source.container->string() + " registered as '" + id +
                                  "' holds samples of dataset '" + x.dataset_id + "'");
    }
  }
  return std::move(c.samples);
}

json ResultsRow::to_json() const {
  return {{"method", method},     {"train", train_ids},   {"test", test_ids},
          {"hter_pct", hter_pct}, {"auc_pct", auc_pct},   {"bpcer_pct", bpcer_pct},
          {"threshold", threshold}, {"seed", seed},       {"config_hash", config_hash}};
}

std::string row_tag(const ResultsRow& row) {
  std::string method;
  for (char c : row.method) method += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  std::string tag;
  for (const auto& id : row.train_ids) tag += id;
  tag += "_to_";
  for (const auto& id : row.test_ids) tag += id;
  return tag + "__" + method;
}

namespace {

using Loader = std::function<const Dataset&(const std::string&)>;

RowOutput run_row(const MethodSpec& method, const Split& split, const TrainConfig& base,
                  const std::map<std::string, DatasetSource>& registry, const Loader& data) {
  auto pool = [&](const std::vector<std::string>& ids) {
    Dataset out;
    for (const auto& id : ids) {
      const Dataset& d = data(id);
      out.insert(out.end(), d.begin(), d.end());
    }
    return out;
  };
  const Dataset train_set = pool(split.train_ids);
  const Dataset test_set = pool(split.test_ids);
  for (const auto& s : test_set) {
    if (std::find(split.train_ids.begin(), split.train_ids.end(), s.dataset_id) != split.train_ids.end()) {
      throw std::logic_error("test pool contains a sample of training dataset " + s.dataset_id);
    }
  }

  TrainConfig cfg = base;
  cfg.model.use_adapter = method.use_adapter;
  cfg.model.adapter.topology = method.topology;

  RowOutput out;
  json datasets = json::object();
  // Synthetic samples always carry the registry id, whatever the spec says.
  auto source_json = [&](const std::string& id) {
    DatasetSource src = registry.at(id);
    if (src.synth) src.synth->dataset_id = id;
    return to_json(src);
  };
  for (const auto& id : split.train_ids) datasets[id] = source_json(id);
  for (const auto& id : split.test_ids) datasets[id] = source_json(id);
  json train_json = to_json(cfg);
  // Results do not depend on the worker count.
  train_json.erase("threads");
  out.config = {{"method", {{"name", method.name}, {"use_adapter", method.use_adapter},
                            {"topology", to_string(method.topology)}}},
                {"train_ids", split.train_ids},
                {"test_ids", split.test_ids},
                {"train", train_json},
                {"datasets", datasets}};

  TrainResult trained = train(cfg, train_set);
  const std::vector<double> scores = predict_scores(trained.params, cfg.model, test_set, cfg.threads);
  const ScoreSet set = score_set(scores, test_set);
  const MetricReport m = evaluate(set);

  out.row = {method.name, split.train_ids, split.test_ids, pct(m.hter), pct(m.auc),
             pct(m.bpcer_at_apcer1), m.threshold, cfg.seed, hex64(config_hash(out.config))};
  std::map<std::string, std::size_t> index;
  for (std::size_t k = 0; k < test_set.size(); ++k) {
    const auto& s = test_set[k];
    out.scores.push_back({s.dataset_id + "/" + std::to_string(index[s.dataset_id]++), scores[k],
                          s.label, s.dataset_id});
  }
  out.roc = roc(set);
  out.log = std::move(trained.log);
  return out;
}

Loader caching_loader(const std::map<std::string, DatasetSource>& registry,
                      std::map<std::string, Dataset>& cache) {
  return [&registry, &cache](const std::string& id) -> const Dataset& {
    auto it = cache.find(id);
    if (it == cache.end()) it = cache.emplace(id, load_dataset(id, registry.at(id))).first;
    return it->second;
  };
}

}  // namespace

ProtocolResult run_protocol(const ProtocolSpec& spec, const RowCallback& on_row) {
  const std::vector<Split> splits = protocol_splits(spec);
  std::map<std::string, Dataset> cache;
  const Loader data = caching_loader(spec.registry, cache);
  ProtocolResult result;
  for (const Split& split : splits) {
    for (const MethodSpec& method : spec.methods) {
      RowOutput out = run_row(method, split, spec.train, spec.registry, data);
      if (on_row) on_row(out);
      result.rows.push_back(std::move(out));
    }
  }
  return result;
}

RowOutput replay_row(const json& config, const std::filesystem::path& base_dir) {
  require_keys(config, "", {"method", "train_ids", "test_ids", "train", "datasets"});
  for (const char* key : {"method", "train_ids", "test_ids", "train", "datasets"}) {
    if (!config.contains(key)) throw ConfigError(key, "missing");
  }
  const json& m = config["method"];
  require_keys(m, "method", {"name", "use_adapter", "topology"});
  MethodSpec method;
  method.name = get_string(m.value("name", json()), "method.name");
  if (!m.contains("use_adapter") || !m["use_adapter"].is_boolean()) {
    throw ConfigError("method.use_adapter", "expected true or false");
  }
  method.use_adapter = m["use_adapter"].get<bool>();
  try {
    method.topology = topology_from_string(get_string(m.value("topology", json()), "method.topology"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError("method.topology", e.what());
  }
  const Split split{get_ids(config["train_ids"], "train_ids"), get_ids(config["test_ids"], "test_ids")};
  const auto registry = registry_from_json({{"datasets", config["datasets"]}}, "", base_dir);
  for (const auto* ids : {&split.train_ids, &split.test_ids}) {
    for (const auto& id : *ids) {
      if (!registry.contains(id)) throw ConfigError("datasets", "no source for dataset '" + id + "'");
    }
  }
  const TrainConfig train_cfg = train_config_from_json(config["train"], "train");
  std::map<std::string, Dataset> cache;
  return run_row(method, split, train_cfg, registry, caching_loader(registry, cache));
}

std::string results_csv(const std::vector<ResultsRow>& rows) {
  std::string out = "Train,Test,Method,HTER(%)\xE2\x86\x93,AUC(%)\xE2\x86\x91,BPCER(%)\xE2\x86\x93,seed,config_hash\n";
  auto quoted = [](const std::string& s) { return "\"" + s + "\""; };
  auto fixed = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    out += quoted(bracket(r.train_ids)) + "," + quoted(bracket(r.test_ids)) + "," + quoted(r.method) + "," +
           fixed(r.hter_pct) + "," + fixed(r.auc_pct) + "," + fixed(r.bpcer_pct) + "," +
           std::to_string(r.seed) + "," + r.config_hash + "\n";
  }
  return out;
}

json results_json(const std::vector<ResultsRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) arr.push_back(r.to_json());
  return {{"columns", {"HTER(%)\xE2\x86\x93", "AUC(%)\xE2\x86\x91", "BPCER(%)\xE2\x86\x93"}}, {"rows", arr}};
}

void write_protocol_outputs(const std::filesystem::path& dir, const ProtocolResult& result) {
  std::vector<ResultsRow> rows;
  for (const auto& r : result.rows) rows.push_back(r.row);
  save_json_file(dir / "results.json", results_json(rows));
  write_text(dir / "results.csv", results_csv(rows));
  for (const auto& r : result.rows) {
    const std::string tag = row_tag(r.row);
    write_text(dir / "scores" / (tag + ".csv"), scores_to_csv(r.scores));
    write_text(dir / "roc" / (tag + ".csv"), roc_to_csv(r.roc));
    write_text(dir / "logs" / (tag + ".jsonl"), r.log.to_jsonl());
    save_json_file(dir / "configs" / (tag + ".json"), r.config);
  }
}

}  // namespace frtpad

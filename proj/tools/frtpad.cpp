// frtpad command line: synthetic data, training, evaluation, protocols,
// ROC export and the gradient check suite.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "frtpad/checkpoint.hpp"
#include "frtpad/config.hpp"
#include "frtpad/container.hpp"
#include "frtpad/gradcheck.hpp"
#include "frtpad/harness.hpp"
#include "frtpad/metrics.hpp"
#include "frtpad/synthetic.hpp"
#include "frtpad/trainer.hpp"

namespace fs = std::filesystem;
using namespace frtpad;

namespace {

std::string read_text(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + file.string());
}

// gen-synth spec: either one SynthSpec object, or
// {"defaults": {...}, "datasets": {id: {...overrides}}}.
int gen_synth(const fs::path& spec_file, const fs::path& out_dir, const std::optional<std::uint64_t>& seed) {
  const json j = load_json_file(spec_file);
  std::vector<SynthSpec> specs;
  if (j.is_object() && j.contains("datasets")) {
    for (const auto& [k, v] : j.items()) {
      if (k != "defaults" && k != "datasets") throw ConfigError(k, "unknown key");
    }
    SynthSpec base;
    if (j.contains("defaults")) base = synth_spec_from_json(j["defaults"], "defaults");
    if (seed) base.seed = *seed;
    if (!j["datasets"].is_object() || j["datasets"].empty()) {
      throw ConfigError("datasets", "expected a non-empty object of dataset id -> overrides");
    }
    std::uint64_t k = 0;
    for (const auto& [id, over] : j["datasets"].items()) {
      SynthSpec s = base;
      s.dataset_id = id;
      // Distinct noise per dataset unless the entry pins its own seed.
      s.seed = base.seed + 1000003ULL * k++;
      s = synth_spec_from_json(over, "datasets." + id, s);
      s.dataset_id = id;
      specs.push_back(std::move(s));
    }
  } else {
    SynthSpec s = synth_spec_from_json(j, "");
    if (seed) s.seed = *seed;
    specs.push_back(std::move(s));
  }

  json registry = {{"datasets", json::object()}};
  for (const SynthSpec& s : specs) {
    const Dataset data = generate_synthetic(s);
    const std::string file = s.dataset_id + ".fstk";
    write_container(out_dir / file, data);
    const Container c = read_container(out_dir / file);
    json manifest = container_manifest(file, c);
    manifest["synth"] = to_json(s);
    save_json_file(out_dir / (s.dataset_id + ".manifest.json"), manifest);
    registry["datasets"][s.dataset_id] = {{"container", file}};
    std::printf("wrote %s (%zu samples)\n", (out_dir / file).string().c_str(), data.size());
  }
  save_json_file(out_dir / "registry.json", registry);
  std::printf("wrote %s\n", (out_dir / "registry.json").string().c_str());
  return 0;
}

Dataset load_containers(const json& list, const std::string& path, const fs::path& base) {
  if (!list.is_array() || list.empty()) throw ConfigError(path, "expected a non-empty array of container paths");
  Dataset out;
  for (std::size_t i = 0; i < list.size(); ++i) {
    if (!list[i].is_string()) throw ConfigError(path + "[" + std::to_string(i) + "]", "expected a path");
    fs::path file = list[i].get<std::string>();
    if (!file.is_absolute()) file = base / file;
    Container c = read_container(file);
    for (auto& s : c.samples) out.push_back(std::move(s));
  }
  return out;
}

// train config: {"train": TrainConfig, "data": {"train": [...], "validation": [...]}}
int train_cmd(const fs::path& config_file, const fs::path& out_dir) {
  const json j = load_json_file(config_file);
  if (!j.is_object()) throw ConfigError("", "expected an object");
  for (const auto& [k, v] : j.items()) {
    if (k != "train" && k != "data") throw ConfigError(k, "unknown key");
  }
  const TrainConfig cfg = train_config_from_json(j.value("train", json::object()), "train");
  if (!j.contains("data") || !j["data"].is_object()) throw ConfigError("data", "expected an object");
  const json& d = j["data"];
  for (const auto& [k, v] : d.items()) {
    if (k != "train" && k != "validation") throw ConfigError("data." + k, "unknown key");
  }
  if (!d.contains("train")) throw ConfigError("data.train", "missing");
  const fs::path base = config_file.parent_path();
  const Dataset train_set = load_containers(d["train"], "data.train", base);
  Dataset validation;
  if (d.contains("validation")) validation = load_containers(d["validation"], "data.validation", base);

  fs::create_directories(out_dir);
  std::ofstream log(out_dir / "train_log.jsonl", std::ios::trunc);
  TrainResult r = train(cfg, train_set, validation.empty() ? nullptr : &validation,
                        [&](const EpochRecord& e) {
                          log << e.to_json().dump() << "\n" << std::flush;
                          std::printf("epoch %zu loss %.6f", e.epoch, e.loss);
                          if (e.validation) {
                            std::printf(" val_hter %.4f val_auc %.4f", e.validation->hter, e.validation->auc);
                          }
                          std::printf(" (%.1fs)\n", e.seconds);
                          std::fflush(stdout);
                        });
  save_checkpoint(out_dir / "model.fprm", cfg.model, r.params);
  save_json_file(out_dir / "train_config.json", to_json(cfg));
  std::printf("wrote %s\n", (out_dir / "model.fprm").string().c_str());
  return 0;
}

int eval_cmd(const fs::path& model, const fs::path& data, const fs::path& report,
             const std::string& scores_out, std::size_t threads) {
  const Checkpoint ck = load_checkpoint(model);
  const Container c = read_container(data);
  const std::vector<double> scores = predict_scores(ck.params, ck.config, c.samples, threads);
  const MetricReport m = evaluate(score_set(scores, c.samples));
  json out = m.to_json();
  out["model"] = model.string();
  out["data"] = data.string();
  out["samples"] = c.samples.size();
  save_json_file(report, out);
  if (!scores_out.empty()) {
    std::vector<ScoreRow> rows;
    for (std::size_t k = 0; k < scores.size(); ++k) {
      rows.push_back({std::to_string(k), scores[k], c.samples[k].label, c.samples[k].dataset_id});
    }
    write_text(scores_out, scores_to_csv(rows));
  }
  std::printf("HTER %.2f%%  AUC %.2f%%  BPCER@APCER=1%% %.2f%%\n", 100 * m.hter, 100 * m.auc,
              100 * m.bpcer_at_apcer1);
  return 0;
}

void print_row(const ResultsRow& r) {
  std::string train, test;
  for (const auto& id : r.train_ids) train += id;
  for (const auto& id : r.test_ids) test += id;
  std::printf("%-6s -> %-6s %-32s HTER %6.2f  AUC %6.2f  BPCER %6.2f\n", train.c_str(), test.c_str(),
              r.method.c_str(), r.hter_pct, r.auc_pct, r.bpcer_pct);
  std::fflush(stdout);
}

int protocol_cmd(const fs::path& spec_file, const fs::path& out_dir) {
  const ProtocolSpec spec = protocol_spec_from_json(load_json_file(spec_file), spec_file.parent_path());
  const ProtocolResult result = run_protocol(spec, [](const RowOutput& r) { print_row(r.row); });
  write_protocol_outputs(out_dir, result);
  std::printf("wrote %s\n", (out_dir / "results.csv").string().c_str());
  return 0;
}

int replay_cmd(const fs::path& config_file) {
  const RowOutput r = replay_row(load_json_file(config_file), config_file.parent_path());
  print_row(r.row);
  std::printf("config_hash %s\n", r.row.config_hash.c_str());
  return 0;
}

int roc_cmd(const fs::path& scores, const fs::path& out) {
  const ScoreSet s = to_score_set(scores_from_csv(read_text(scores)));
  write_text(out, roc_to_csv(roc(s)));
  std::printf("AUC %.6f\n", auc(s));
  return 0;
}

int gradcheck_cmd(std::size_t seeds, double tolerance) {
  const GradCheckReport report = run_gradcheck(seeds, tolerance);
  for (const auto& c : report.cases) {
    std::printf("%-32s seeds %3zu  max rel err %.3e  %s\n", c.name.c_str(), c.seeds, c.max_rel_error,
                c.passed() ? "ok" : "FAIL");
  }
  std::printf("%zu cases in %.2fs: %s\n", report.cases.size(), report.seconds,
              report.all_passed() ? "all passed" : "FAILURES");
  return report.all_passed() ? 0 : 1;
}

int validate_cmd(const fs::path& file) {
  const Container c = read_container(file);
  std::printf("%s\n", container_manifest(file.filename().string(), c).dump(2).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Face presentation-attack detection with a graph-attention feature adapter"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::string spec, out, config, model, data, report, scores, container;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1, seeds = 20;
  double tolerance = 1e-4;

  auto* gen = app.add_subcommand("gen-synth", "Generate synthetic datasets as containers plus a registry");
  gen->add_option("--spec", spec, "Synthetic spec JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seed", seed, "Base noise seed (overrides the spec)");

  auto* tr = app.add_subcommand("train", "Train a model; writes model.fprm and train_log.jsonl");
  tr->add_option("--config", config, "Training config JSON")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Score a container with a checkpoint and write a metric report");
  ev->add_option("--model", model, "Checkpoint (.fprm)")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data, "Container (.fstk)")->required()->check(CLI::ExistingFile);
  ev->add_option("--report", report, "Report JSON path")->required();
  ev->add_option("--scores", scores, "Optional score CSV path");
  ev->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  auto* pr = app.add_subcommand("protocol", "Run a cross-dataset protocol and write result tables");
  pr->add_option("--spec", spec, "Protocol spec JSON")->required()->check(CLI::ExistingFile);
  pr->add_option("--out", out, "Output directory")->required();

  auto* rp = app.add_subcommand("replay", "Re-run one protocol row from its recorded config");
  rp->add_option("--config", config, "Row config JSON (configs/<row>.json)")->required()->check(CLI::ExistingFile);

  auto* rc = app.add_subcommand("roc", "Convert a score CSV into ROC points");
  rc->add_option("--scores", scores, "Score CSV")->required()->check(CLI::ExistingFile);
  rc->add_option("--out", out, "ROC CSV path")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  gc->add_option("--seeds", seeds, "Random instances per case")->check(CLI::PositiveNumber);
  gc->add_option("--tolerance", tolerance, "Maximum relative error");

  auto* va = app.add_subcommand("validate", "Check a container file and print its manifest");
  va->add_option("container", container, "Container (.fstk)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return e.get_exit_code() == 0 ? 0 : (code == 0 ? 2 : code);
  }

  try {
    if (*gen) return gen_synth(spec, out, seed);
    if (*tr) return train_cmd(config, out);
    if (*ev) return eval_cmd(model, data, report, scores, threads);
    if (*pr) return protocol_cmd(spec, out);
    if (*rp) return replay_cmd(config);
    if (*rc) return roc_cmd(scores, out);
    if (*gc) return gradcheck_cmd(seeds, tolerance);
    if (*va) return validate_cmd(container);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: config: %s\n", e.what());
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: format: %s\n", e.what());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: runtime: %s\n", e.what());
  }
  return 1;
}

#include "frtpad/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace frtpad {

ConfigError::ConfigError(std::string key_path, const std::string& message)
    : std::runtime_error((key_path.empty() ? std::string("<root>") : key_path) + ": " + message),
      key_path_(std::move(key_path)) {}

namespace {

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

std::string index_path(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

// Typed field access with key-path errors and unknown-key detection.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  [[nodiscard]] bool has(const char* key) const { return j_.contains(key); }
  [[nodiscard]] std::string path(const char* key) const { return join(path_, key); }

  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void get(const char* key, std::size_t& out) {
    if (has(key)) out = to_size(raw(key), path(key));
  }
  void get_u64(const char* key, std::uint64_t& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      throw ConfigError(path(key), "expected a non-negative integer");
    }
    out = v.get<std::uint64_t>();
  }
  void get(const char* key, double& out) {
    if (has(key)) out = to_double(raw(key), path(key));
  }
  void get(const char* key, float& out) {
    if (!has(key)) return;
    const double v = to_double(raw(key), path(key));
    if (std::abs(v) > std::numeric_limits<float>::max()) throw ConfigError(path(key), "out of float range");
    out = static_cast<float>(v);
  }
  void get(const char* key, bool& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(path(key), "expected true or false");
    out = v.get<bool>();
  }
  void get(const char* key, std::string& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(path(key), "expected a string");
    out = v.get<std::string>();
  }
  void get(const char* key, LevelDims& out) {
    if (has(key)) out = to_dims(raw(key), path(key));
  }
  void get(const char* key, std::vector<LevelDims>& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_array()) throw ConfigError(path(key), "expected an array of [c, h, w] triples");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(to_dims(v[i], index_path(path(key), i)));
  }
  void get(const char* key, std::vector<std::size_t>& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_array()) throw ConfigError(path(key), "expected an array of integers");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(to_size(v[i], index_path(path(key), i)));
  }
  void get(const char* key, std::vector<double>& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_array()) throw ConfigError(path(key), "expected an array of numbers");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(to_double(v[i], index_path(path(key), i)));
  }

  // Parses an enum through `from_string`, reporting failures at the key.
  template <typename E, typename F>
  void get_enum(const char* key, E& out, F from_string) {
    std::string s;
    get(key, s);
    if (!has(key)) return;
    try {
      out = from_string(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path(key), e.what());
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw ConfigError(join(path_, k), "unknown key");
    }
  }

  static std::size_t to_size(const json& v, const std::string& p) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      throw ConfigError(p, "expected a non-negative integer");
    }
    return v.get<std::size_t>();
  }
  static double to_double(const json& v, const std::string& p) {
    if (!v.is_number()) throw ConfigError(p, "expected a number");
    return v.get<double>();
  }
  static LevelDims to_dims(const json& v, const std::string& p) {
    if (!v.is_array() || v.size() != 3) throw ConfigError(p, "expected [c, h, w]");
    return {to_size(v[0], index_path(p, 0)), to_size(v[1], index_path(p, 1)),
            to_size(v[2], index_path(p, 2))};
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json dims_json(const LevelDims& d) { return json::array({d.channels, d.height, d.width}); }

json dims_list_json(const std::vector<LevelDims>& v) {
  json out = json::array();
  for (const auto& d : v) out.push_back(dims_json(d));
  return out;
}

// Runs `check` and re-throws its std::invalid_argument as a ConfigError at
// `path`.
template <typename F>
void validated(const std::string& path, F check) {
  try {
    check();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
}

}  // namespace

json to_json(const AdapterConfig& c) {
  return {{"levels", dims_list_json(c.levels)},
          {"proj_channels", c.proj_channels},
          {"pool_size", c.pool_size},
          {"vertex_dim", c.vertex_dim},
          {"hidden_dim", c.hidden_dim},
          {"output_dim", c.output_dim},
          {"heads", c.heads},
          {"topology", to_string(c.topology)},
          {"self_loops", c.self_loops},
          {"leaky_scores", c.leaky_scores},
          {"leaky_alpha", c.leaky_alpha}};
}

json to_json(const DetectorConfig& c) {
  return {{"input", dims_json(c.input)}, {"channels", c.channels}, {"feature_dim", c.feature_dim}};
}

json to_json(const ModelConfig& c) {
  return {{"detector", to_json(c.detector)}, {"adapter", to_json(c.adapter)}, {"use_adapter", c.use_adapter}};
}

json to_json(const TrainConfig& c) {
  return {{"model", to_json(c.model)},
          {"lr", c.adam.lr},
          {"weight_decay", c.adam.weight_decay},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"eps", c.adam.eps},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"deterministic", c.deterministic},
          {"threads", c.threads}};
}

json to_json(const SynthSpec& s) {
  json j = {{"dataset_id", s.dataset_id},
            {"source_tag", s.source_tag},
            {"per_class", s.per_class},
            {"raw", dims_json(s.raw)},
            {"levels", dims_list_json(s.levels)},
            {"signal_target", to_string(s.signal_target)},
            {"amplitude", s.amplitude},
            {"raw_amplitude", s.raw_amplitude},
            {"noise_std", s.noise_std},
            {"domain_shift", s.domain_shift},
            {"seed", s.seed},
            {"pattern_seed", s.pattern_seed}};
  if (s.raw_pattern_seed) j["raw_pattern_seed"] = *s.raw_pattern_seed;
  return j;
}

AdapterConfig adapter_config_from_json(const json& j, const std::string& path,
                                       const AdapterConfig& base) {
  AdapterConfig c = base;
  Obj o(j, path);
  o.get("levels", c.levels);
  o.get("proj_channels", c.proj_channels);
  o.get("pool_size", c.pool_size);
  o.get("vertex_dim", c.vertex_dim);
  o.get("hidden_dim", c.hidden_dim);
  o.get("output_dim", c.output_dim);
  o.get("heads", c.heads);
  o.get_enum("topology", c.topology, topology_from_string);
  o.get("self_loops", c.self_loops);
  o.get("leaky_scores", c.leaky_scores);
  o.get("leaky_alpha", c.leaky_alpha);
  o.finish();
  return c;
}

DetectorConfig detector_config_from_json(const json& j, const std::string& path,
                                         const DetectorConfig& base) {
  DetectorConfig c = base;
  Obj o(j, path);
  o.get("input", c.input);
  o.get("channels", c.channels);
  o.get("feature_dim", c.feature_dim);
  o.finish();
  return c;
}

ModelConfig model_config_from_json(const json& j, const std::string& path, const ModelConfig& base) {
  ModelConfig c = base;
  Obj o(j, path);
  if (o.has("detector")) c.detector = detector_config_from_json(o.raw("detector"), o.path("detector"), c.detector);
  if (o.has("adapter")) c.adapter = adapter_config_from_json(o.raw("adapter"), o.path("adapter"), c.adapter);
  o.get("use_adapter", c.use_adapter);
  o.finish();
  validated(o.has("detector") ? o.path("detector") : path, [&] { c.detector.validate(); });
  if (c.use_adapter) validated(o.has("adapter") ? o.path("adapter") : path, [&] { c.adapter.validate(); });
  return c;
}

TrainConfig train_config_from_json(const json& j, const std::string& path, const TrainConfig& base) {
  TrainConfig c = base;
  Obj o(j, path);
  if (o.has("model")) c.model = model_config_from_json(o.raw("model"), o.path("model"), c.model);
  o.get("lr", c.adam.lr);
  o.get("weight_decay", c.adam.weight_decay);
  o.get("beta1", c.adam.beta1);
  o.get("beta2", c.adam.beta2);
  o.get("eps", c.adam.eps);
  o.get("batch_size", c.batch_size);
  o.get("epochs", c.epochs);
  o.get_u64("seed", c.seed);
  o.get("deterministic", c.deterministic);
  o.get("threads", c.threads);
  o.finish();
  if (!(c.adam.lr > 0.0f)) throw ConfigError(o.path("lr"), "must be > 0");
  if (c.adam.weight_decay < 0.0f) throw ConfigError(o.path("weight_decay"), "must be >= 0");
  if (c.batch_size == 0) throw ConfigError(o.path("batch_size"), "must be >= 1");
  if (c.threads == 0) throw ConfigError(o.path("threads"), "must be >= 1");
  validated(path, [&] { c.validate(); });
  return c;
}

SynthSpec synth_spec_from_json(const json& j, const std::string& path, const SynthSpec& base) {
  SynthSpec s = base;
  Obj o(j, path);
  o.get("dataset_id", s.dataset_id);
  o.get("source_tag", s.source_tag);
  o.get("per_class", s.per_class);
  o.get("raw", s.raw);
  o.get("levels", s.levels);
  o.get_enum("signal_target", s.signal_target, signal_target_from_string);
  o.get("amplitude", s.amplitude);
  o.get("raw_amplitude", s.raw_amplitude);
  o.get("noise_std", s.noise_std);
  o.get("domain_shift", s.domain_shift);
  o.get_u64("seed", s.seed);
  o.get_u64("pattern_seed", s.pattern_seed);
  if (o.has("raw_pattern_seed")) {
    std::uint64_t v = 0;
    o.get_u64("raw_pattern_seed", v);
    s.raw_pattern_seed = v;
  }
  o.finish();
  if (s.per_class == 0) throw ConfigError(o.path("per_class"), "must be > 0");
  if (!(s.noise_std >= 0.0)) throw ConfigError(o.path("noise_std"), "must be >= 0");
  validated(path, [&] { s.validate(); });
  return s;
}

json load_json_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("", "cannot open " + file.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("", file.string() + " is not valid JSON (" + e.what() + ")");
  }
}

void save_json_file(const std::filesystem::path& file, const json& j) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write " + file.string());
}

std::uint64_t config_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace frtpad

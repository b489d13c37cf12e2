#pragma once

// JSON forms of every configuration struct. Readers start from the struct
// defaults, override what the document names and reject unknown keys.
// Errors carry the dotted key path of the offending entry.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "frtpad/synthetic.hpp"
#include "frtpad/trainer.hpp"

namespace frtpad {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key_path, const std::string& message);

  [[nodiscard]] const std::string& key_path() const { return key_path_; }

 private:
  std::string key_path_;
};

using nlohmann::json;

json to_json(const AdapterConfig& c);
json to_json(const DetectorConfig& c);
json to_json(const ModelConfig& c);
json to_json(const TrainConfig& c);
json to_json(const SynthSpec& s);

// `path` prefixes key paths in error messages, e.g. "train.model".
AdapterConfig adapter_config_from_json(const json& j, const std::string& path = "",
                                       const AdapterConfig& base = {});
DetectorConfig detector_config_from_json(const json& j, const std::string& path = "",
                                         const DetectorConfig& base = {});
ModelConfig model_config_from_json(const json& j, const std::string& path = "",
                                   const ModelConfig& base = {});
TrainConfig train_config_from_json(const json& j, const std::string& path = "",
                                   const TrainConfig& base = {});
SynthSpec synth_spec_from_json(const json& j, const std::string& path = "",
                               const SynthSpec& base = {});

// Throws ConfigError with key path "" on unreadable files or bad JSON.
json load_json_file(const std::filesystem::path& file);
void save_json_file(const std::filesystem::path& file, const json& j);

// FNV-1a 64 of the compact dump (keys are sorted by nlohmann::json).
std::uint64_t config_hash(const json& j);
std::string hex64(std::uint64_t v);

}  // namespace frtpad

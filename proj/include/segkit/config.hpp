#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "segkit/dataio.hpp"
#include "segkit/model_spec.hpp"
#include "segkit/training.hpp"

namespace segkit {

// Everything a command needs, merged from a flat JSON object. Keys mirror
// the field names of DatasetConfig, ModelSpec and TrainConfig; n_classes
// and the input dims are shared between dataset and model.
struct RunConfig {
  std::string name;  // profile label, informational
  DatasetConfig dataset;
  ModelSpec spec;
  TrainConfig train;
  std::vector<std::string> class_names;  // empty: class<i>
  std::optional<std::filesystem::path> palette;
  std::filesystem::path out_dir = "segkit-out";
  double alpha = 0.5;
};

// Flat keys with their defaults.
nlohmann::json default_config_json();

// Overlays `overrides` on `base` key by key. Unknown keys throw ConfigError.
nlohmann::json merge_config(nlohmann::json base, const nlohmann::json& overrides);

// Parses a command-line value: JSON if it parses, otherwise a string.
nlohmann::json parse_override_value(const std::string& text);

// Reads a config file. Relative data paths (images_dir, annotations_dir,
// palette) are resolved against the file's directory.
nlohmann::json read_config_file(const std::filesystem::path& path);

// Builds and validates. Throws ConfigError (or SpecError) naming the key.
RunConfig run_config_from_json(const nlohmann::json& flat);
nlohmann::json to_json(const RunConfig& config);

// Checkpoint directory, defaulting to <out_dir>/checkpoints.
std::filesystem::path checkpoint_dir(const RunConfig& config);

}  // namespace segkit

#include "segkit/config.hpp"

#include <fstream>

namespace segkit {

namespace fs = std::filesystem;

namespace {

template <typename T>
T get_key(const nlohmann::json& flat, const char* key) {
  try {
    return flat.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + std::string(key) + "' has an invalid value: " + flat.at(key).dump());
  }
}

std::optional<std::array<float, 3>> get_triple(const nlohmann::json& flat, const char* key) {
  const auto& v = flat.at(key);
  if (v.is_null()) return std::nullopt;
  if (!v.is_array() || v.size() != 3) throw ConfigError("config key '" + std::string(key) + "' must be [r, g, b]");
  return get_key<std::array<float, 3>>(flat, key);
}

nlohmann::json path_or_null(const std::optional<fs::path>& p) {
  return p ? nlohmann::json(p->string()) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json default_config_json() {
  const RunConfig d;
  return {
      {"name", ""},
      {"images_dir", ""},
      {"annotations_dir", ""},
      {"n_classes", d.spec.n_classes},
      {"input_height", d.spec.input_height},
      {"input_width", d.spec.input_width},
      {"output_height", nullptr},  // null: input dims
      {"output_width", nullptr},
      {"shuffle_seed", d.dataset.shuffle_seed},
      {"channel_mean", nullptr},
      {"channel_std", nullptr},
      {"encoder", std::string(to_string(d.spec.encoder))},
      {"decoder", std::string(to_string(d.spec.decoder))},
      {"pretrained_source", nullptr},
      {"epochs", d.train.epochs},
      {"batch_size", d.train.batch_size},
      {"learning_rate", d.train.learning_rate},
      {"optimizer", std::string(to_string(d.train.optimizer_kind))},
      {"momentum", d.train.momentum},
      {"beta1", d.train.beta1},
      {"beta2", d.train.beta2},
      {"checkpoint_dir", ""},  // empty: <out_dir>/checkpoints
      {"seed", d.train.seed},
      {"validation_fraction", d.train.validation_fraction},
      {"class_weights", nlohmann::json::array()},
      {"ignore_index", d.train.ignore_index},
      {"keep_epoch_checkpoints", d.train.keep_epoch_checkpoints},
      {"class_names", nlohmann::json::array()},
      {"palette", nullptr},
      {"out_dir", d.out_dir.string()},
      {"alpha", d.alpha},
  };
}

nlohmann::json merge_config(nlohmann::json base, const nlohmann::json& overrides) {
  if (!overrides.is_object()) throw ConfigError("config must be a JSON object of flat keys");
  for (const auto& [key, value] : overrides.items()) {
    if (!base.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    base[key] = value;
  }
  return base;
}

nlohmann::json parse_override_value(const std::string& text) {
  auto parsed = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
  return parsed.is_discarded() ? nlohmann::json(text) : parsed;
}

nlohmann::json read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config '" + path.string() + "' must be a JSON object");
  const fs::path base = path.parent_path();
  for (const char* key : {"images_dir", "annotations_dir", "palette"}) {
    if (j.contains(key) && j[key].is_string()) {
      const fs::path p = j[key].get<std::string>();
      if (!p.empty() && p.is_relative()) j[key] = (base / p).lexically_normal().string();
    }
  }
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& input) {
  const nlohmann::json flat = merge_config(default_config_json(), input);
  RunConfig c;
  c.name = get_key<std::string>(flat, "name");

  c.spec = make_spec(parse_encoder_kind(get_key<std::string>(flat, "encoder")),
                     parse_decoder_kind(get_key<std::string>(flat, "decoder")), get_key<int>(flat, "n_classes"),
                     get_key<int>(flat, "input_height"), get_key<int>(flat, "input_width"));
  if (!flat.at("pretrained_source").is_null()) {
    c.spec.pretrained_source = get_key<std::string>(flat, "pretrained_source");
  }
  validate(c.spec);

  auto& d = c.dataset;
  d.images_dir = get_key<std::string>(flat, "images_dir");
  d.annotations_dir = get_key<std::string>(flat, "annotations_dir");
  d.n_classes = c.spec.n_classes;
  d.input_height = c.spec.input_height;
  d.input_width = c.spec.input_width;
  d.output_height = flat.at("output_height").is_null() ? d.input_height : get_key<int>(flat, "output_height");
  d.output_width = flat.at("output_width").is_null() ? d.input_width : get_key<int>(flat, "output_width");
  d.shuffle_seed = get_key<std::int64_t>(flat, "shuffle_seed");
  d.channel_mean = get_triple(flat, "channel_mean");
  d.channel_std = get_triple(flat, "channel_std");
  validate(d);

  auto& t = c.train;
  t.epochs = get_key<int>(flat, "epochs");
  t.batch_size = get_key<int>(flat, "batch_size");
  t.learning_rate = get_key<double>(flat, "learning_rate");
  t.optimizer_kind = parse_optimizer_kind(get_key<std::string>(flat, "optimizer"));
  t.momentum = get_key<double>(flat, "momentum");
  t.beta1 = get_key<double>(flat, "beta1");
  t.beta2 = get_key<double>(flat, "beta2");
  t.checkpoint_dir = get_key<std::string>(flat, "checkpoint_dir");
  t.seed = get_key<std::uint64_t>(flat, "seed");
  t.validation_fraction = get_key<double>(flat, "validation_fraction");
  t.class_weights = get_key<std::vector<float>>(flat, "class_weights");
  t.ignore_index = get_key<int>(flat, "ignore_index");
  t.keep_epoch_checkpoints = get_key<bool>(flat, "keep_epoch_checkpoints");
  validate(t, c.spec.n_classes);

  c.class_names = get_key<std::vector<std::string>>(flat, "class_names");
  if (!c.class_names.empty() && static_cast<int>(c.class_names.size()) != c.spec.n_classes) {
    throw ConfigError("class_names has " + std::to_string(c.class_names.size()) + " entries but n_classes is " +
                      std::to_string(c.spec.n_classes));
  }
  if (!flat.at("palette").is_null()) c.palette = fs::path(get_key<std::string>(flat, "palette"));
  c.out_dir = get_key<std::string>(flat, "out_dir");
  if (c.out_dir.empty()) throw ConfigError("out_dir must not be empty");
  c.alpha = get_key<double>(flat, "alpha");
  if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) throw ConfigError("alpha must be in [0, 1]");
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  auto triple = [](const std::optional<std::array<float, 3>>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {
      {"name", c.name},
      {"images_dir", c.dataset.images_dir.string()},
      {"annotations_dir", c.dataset.annotations_dir.string()},
      {"n_classes", c.spec.n_classes},
      {"input_height", c.spec.input_height},
      {"input_width", c.spec.input_width},
      {"output_height", c.dataset.output_height},
      {"output_width", c.dataset.output_width},
      {"shuffle_seed", c.dataset.shuffle_seed},
      {"channel_mean", triple(c.dataset.channel_mean)},
      {"channel_std", triple(c.dataset.channel_std)},
      {"encoder", std::string(to_string(c.spec.encoder))},
      {"decoder", std::string(to_string(c.spec.decoder))},
      {"pretrained_source",
       c.spec.pretrained_source ? nlohmann::json(*c.spec.pretrained_source) : nlohmann::json(nullptr)},
      {"epochs", c.train.epochs},
      {"batch_size", c.train.batch_size},
      {"learning_rate", c.train.learning_rate},
      {"optimizer", std::string(to_string(c.train.optimizer_kind))},
      {"momentum", c.train.momentum},
      {"beta1", c.train.beta1},
      {"beta2", c.train.beta2},
      {"checkpoint_dir", c.train.checkpoint_dir.string()},
      {"seed", c.train.seed},
      {"validation_fraction", c.train.validation_fraction},
      {"class_weights", c.train.class_weights},
      {"ignore_index", c.train.ignore_index},
      {"keep_epoch_checkpoints", c.train.keep_epoch_checkpoints},
      {"class_names", c.class_names},
      {"palette", path_or_null(c.palette)},
      {"out_dir", c.out_dir.string()},
      {"alpha", c.alpha},
  };
}

fs::path checkpoint_dir(const RunConfig& config) {
  return config.train.checkpoint_dir.empty() ? config.out_dir / "checkpoints" : config.train.checkpoint_dir;
}

}  // namespace segkit

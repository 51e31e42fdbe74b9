#include "segkit/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "segkit/config.hpp"
#include "segkit/image_io.hpp"
#include "segkit/inference.hpp"
#include "segkit/metrics.hpp"
#include "segkit/persistence.hpp"
#include "segkit/training.hpp"

namespace segkit {

namespace fs = std::filesystem;

namespace {

struct Invocation {
  std::string config_path;
  bool quiet = false;
  // Values of sugar flags are collected into `overrides`; these only exist
  // so the flags show up in --help.
  std::string seed_flag, out_flag, alpha_flag;
  std::string resume;
  bool skip_verify = false;
  std::string checkpoint;
  std::string init_from;
  std::string name_map;
  std::vector<std::string> inputs;
  nlohmann::json overrides = nlohmann::json::object();
};

// Flags that map onto a differently named config key.
const std::map<std::string, std::string>& flag_aliases() {
  static const std::map<std::string, std::string> aliases{{"out", "out_dir"}};
  return aliases;
}

// Pulls `--key value` / `--key=value` pairs naming config keys out of the
// argument list; everything else is left for the parser.
std::vector<std::string> extract_overrides(const std::vector<std::string>& args, nlohmann::json& overrides) {
  const nlohmann::json keys = default_config_json();
  std::vector<std::string> rest;
  for (size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0 || a.size() <= 2) {
      rest.push_back(a);
      continue;
    }
    std::string key = a.substr(2);
    std::optional<std::string> value;
    if (auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    }
    std::replace(key.begin(), key.end(), '-', '_');
    if (auto alias = flag_aliases().find(key); alias != flag_aliases().end()) key = alias->second;
    if (!keys.contains(key)) {
      rest.push_back(a);
      continue;
    }
    if (!value) {
      if (i + 1 >= args.size()) throw ConfigError("flag " + a + " needs a value");
      value = args[++i];
    }
    overrides[key] = parse_override_value(*value);
  }
  return rest;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("cannot write '" + path.string() + "'");
}

RunConfig load_run_config(const Invocation& inv) {
  nlohmann::json flat = nlohmann::json::object();
  if (!inv.config_path.empty()) flat = read_config_file(inv.config_path);
  for (const auto& [key, value] : inv.overrides.items()) flat[key] = value;
  RunConfig config = run_config_from_json(flat);
  fs::create_directories(config.out_dir);
  write_json(config.out_dir / "config.effective.json", to_json(config));
  return config;
}

fs::path resolve_checkpoint(const Invocation& inv, const RunConfig& config) {
  const fs::path path = inv.checkpoint.empty() ? checkpoint_dir(config) / "best.ckpt" : fs::path(inv.checkpoint);
  if (!fs::exists(path)) throw ConfigError("checkpoint not found: '" + path.string() + "'");
  return path;
}

std::vector<std::string> class_names_of(const RunConfig& config) {
  if (!config.class_names.empty()) return config.class_names;
  std::vector<std::string> names;
  for (int i = 0; i < config.spec.n_classes; ++i) names.push_back("class" + std::to_string(i));
  return names;
}

int cmd_verify(const Invocation& inv, std::ostream& out) {
  const RunConfig config = load_run_config(inv);
  const DatasetReport report = verify_dataset(config.dataset);
  write_json(config.out_dir / "verify.json", to_json(report));
  out << render_text(report);
  return report.clean() ? kExitOk : kExitDataDefects;
}

int cmd_train(const Invocation& inv, std::ostream& out, std::ostream& err) {
  RunConfig config = load_run_config(inv);
  config.train.checkpoint_dir = checkpoint_dir(config);
  if (!inv.skip_verify) {
    const DatasetReport report = verify_dataset(config.dataset);
    if (!report.clean()) {
      out << render_text(report);
      return kExitDataDefects;
    }
  }
  TrainOptions options;
  if (!inv.resume.empty()) {
    if (!fs::exists(inv.resume)) throw ConfigError("checkpoint not found: '" + inv.resume + "'");
    options.resume_from = fs::path(inv.resume);
  }
  if (!inv.init_from.empty()) {
    if (inv.name_map.empty()) throw ConfigError("--init-from needs --name-map");
    const Checkpoint foreign = read_checkpoint(inv.init_from);
    const TranslationTable table = read_translation_table(inv.name_map);
    const std::string source = config.spec.pretrained_source.value_or(fs::path(inv.init_from).stem().string());
    options.initialize = [&, source](SegmentationModel& model) {
      const size_t n = import_pretrained(model, foreign, table, source);
      if (!inv.quiet) err << "imported " << n << " arrays from " << inv.init_from << '\n';
    };
  }
  if (!inv.quiet) options.log = [&err](const std::string& line) { err << line << '\n'; };

  const TrainResult result = train(config.spec, config.dataset, config.train, options);
  out << "trained " << result.history.epochs.size() << " epochs, " << result.history.optimizer_steps()
      << " optimizer steps; checkpoints in " << config.train.checkpoint_dir.string() << '\n';
  return kExitOk;
}

int cmd_evaluate(const Invocation& inv, std::ostream& out) {
  const RunConfig config = load_run_config(inv);
  const SegmentationModel model = load_checkpoint(resolve_checkpoint(inv, config), config.spec);
  const EvalReport report = evaluate_split(model, config.dataset, class_names_of(config));
  const std::string table = render_table(report);
  {
    std::ofstream txt(config.out_dir / "report.txt", std::ios::trunc);
    txt << table;
  }
  write_json(config.out_dir / "report.json", to_json(report));
  out << table;
  return kExitOk;
}

int cmd_predict(const Invocation& inv, std::ostream& out, std::ostream& err) {
  const RunConfig config = load_run_config(inv);
  if (inv.inputs.empty()) throw ConfigError("predict needs at least one input image");
  const SegmentationModel model = load_checkpoint(resolve_checkpoint(inv, config), config.spec);
  const ClassPalette palette =
      config.palette ? load_palette(*config.palette) : default_palette(config.spec.n_classes, config.class_names);
  if (palette.size() != config.spec.n_classes) {
    throw ConfigError("palette has " + std::to_string(palette.size()) + " colors for " +
                      std::to_string(config.spec.n_classes) + " classes");
  }
  int failures = 0;
  for (const auto& input : inv.inputs) {
    try {
      const RgbImage image = read_png_rgb(input);
      const LabelGrid at_model = predict_labels(model, prepare_image(image, config.dataset));
      const LabelGrid labels = resize_labels_nearest(at_model, image.dim(0), image.dim(1));
      const std::string stem = fs::path(input).stem().string();
      const fs::path label_path = config.out_dir / (stem + ".labels.png");
      const fs::path overlay_path = config.out_dir / (stem + ".overlay.png");
      write_png_labels(label_path, labels);
      write_png_rgb(overlay_path, overlay(image, labels, palette, config.alpha));
      out << input << " -> " << label_path.string() << ", " << overlay_path.string() << '\n';
    } catch (const Error& e) {
      ++failures;
      err << "error: " << input << ": " << e.what() << '\n';
    }
  }
  return failures == 0 ? kExitOk : kExitDataDefects;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Invocation inv;
  CLI::App app{"segkit: semantic segmentation toolkit", "segkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all commands");
  app.add_option("--config", inv.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_flag("--quiet", inv.quiet, "Suppress progress output");
  app.add_option("--seed", inv.seed_flag, "Seed (config key 'seed')");
  app.add_option("--out", inv.out_flag, "Output directory (config key 'out_dir')");
  app.footer("Any config key can be overridden with --<key> <value>.");

  auto* verify = app.add_subcommand("verify", "Check image/annotation pairing and label ranges");
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--resume", inv.resume, "Resume from a checkpoint");
  train_cmd->add_flag("--skip-verify", inv.skip_verify, "Do not verify the dataset first");
  train_cmd->add_option("--init-from", inv.init_from, "Parameter archive with foreign weights");
  train_cmd->add_option("--name-map", inv.name_map, "Translation table for --init-from");
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a dataset");
  evaluate->add_option("--checkpoint", inv.checkpoint, "Checkpoint (default <checkpoint_dir>/best.ckpt)");
  auto* predict = app.add_subcommand("predict", "Write label maps and overlays for images");
  predict->add_option("--checkpoint", inv.checkpoint, "Checkpoint (default <checkpoint_dir>/best.ckpt)");
  predict->add_option("--alpha", inv.alpha_flag, "Overlay opacity in [0, 1] (config key 'alpha')");
  predict->add_option("inputs", inv.inputs, "Input images");
  for (auto* sub : {verify, train_cmd, evaluate, predict}) sub->fallthrough();

  try {
    std::vector<std::string> rest = extract_overrides(args, inv.overrides);
    std::reverse(rest.begin(), rest.end());  // CLI11 consumes from the back
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfigError;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitConfigError;
  }

  try {
    if (*verify) return cmd_verify(inv, out);
    if (*train_cmd) return cmd_train(inv, out, err);
    if (*evaluate) return cmd_evaluate(inv, out);
    return cmd_predict(inv, out, err);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitDataDefects;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntimeFailure;
  }
}

}  // namespace segkit

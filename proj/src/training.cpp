#include "segkit/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "segkit/inference.hpp"
#include "segkit/persistence.hpp"

namespace segkit {

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Labels at the resolution of `truth`, from distributions at any resolution.
std::vector<LabelGrid> predictions_for(const Tensorf& probs, std::span<const LabelGrid> truth) {
  if (truth.empty()) return {};
  const Index h = truth.front().rows(), w = truth.front().cols();
  if (probs.height() == h && probs.width() == w) return argmax_batch(probs);
  return argmax_batch(resize_bilinear(probs, h, w));
}

void write_text_atomically(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << text;
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

}  // namespace

void validate(const TrainConfig& config) {
  if (config.epochs < 1) throw ConfigError("epochs must be >= 1, got " + std::to_string(config.epochs));
  if (config.batch_size < 1) {
    throw ConfigError("batch_size must be >= 1, got " + std::to_string(config.batch_size));
  }
  if (!(config.learning_rate > 0.0) || !std::isfinite(config.learning_rate)) {
    throw ConfigError("learning_rate must be > 0");
  }
  if (!(config.validation_fraction >= 0.0 && config.validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must be in [0, 1)");
  }
  for (float w : config.class_weights) {
    if (!(w >= 0.0f) || !std::isfinite(w)) throw ConfigError("class_weights must be finite and >= 0");
  }
  // Momentum/beta ranges are checked by the optimizer.
  Optimizer check(optimizer_config(config));
  (void)check;
}

void validate(const TrainConfig& config, int n_classes) {
  validate(config);
  if (!config.class_weights.empty() && static_cast<int>(config.class_weights.size()) != n_classes) {
    throw ConfigError("class_weights has " + std::to_string(config.class_weights.size()) + " entries for " +
                      std::to_string(n_classes) + " classes");
  }
  if (config.ignore_index >= n_classes) {
    throw ConfigError("ignore_index " + std::to_string(config.ignore_index) + " is not a class in [0, " +
                      std::to_string(n_classes) + ")");
  }
}

OptimizerConfig optimizer_config(const TrainConfig& config) {
  OptimizerConfig oc;
  oc.kind = config.optimizer_kind;
  oc.learning_rate = config.learning_rate;
  oc.momentum = config.momentum;
  oc.beta1 = config.beta1;
  oc.beta2 = config.beta2;
  return oc;
}

nlohmann::json to_json(const EpochRecord& record) {
  return {{"epoch", record.epoch},
          {"loss", record.loss},
          {"pixel_accuracy", record.pixel_accuracy},
          {"validation_miou",
           record.validation_miou ? nlohmann::json(*record.validation_miou) : nlohmann::json(nullptr)},
          {"seconds", record.seconds},
          {"optimizer_steps", record.optimizer_steps}};
}

EpochRecord epoch_record_from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.loss = j.at("loss").get<double>();
  r.pixel_accuracy = j.at("pixel_accuracy").get<double>();
  if (!j.at("validation_miou").is_null()) r.validation_miou = j.at("validation_miou").get<double>();
  r.seconds = j.at("seconds").get<double>();
  r.optimizer_steps = j.at("optimizer_steps").get<std::int64_t>();
  return r;
}

std::string to_json_lines(const TrainHistory& history) {
  std::string out;
  for (const auto& r : history.epochs) out += to_json(r).dump() + "\n";
  return out;
}

Var segmentation_loss(const ModelOutput& output, std::span<const LabelGrid> truth,
                      const LossWeighting& weighting) {
  if (truth.empty()) throw ShapeError("loss over an empty label batch");
  const Index h = truth.front().rows(), w = truth.front().cols();
  const Tensorf& scores = output.scores.value();
  if (scores.height() == h && scores.width() == w) {
    return softmax_cross_entropy(output.scores, truth, weighting);
  }
  const Tensorf& probs = output.probs.value();
  if (probs.height() == h && probs.width() == w) {
    return cross_entropy(output.probs, truth, kProbabilityEpsilon, weighting);
  }
  return cross_entropy(resize_bilinear(output.probs, h, w), truth, kProbabilityEpsilon, weighting);
}

PairSplit split_pairs(std::vector<SamplePair> pairs, double validation_fraction) {
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must be in [0, 1)");
  }
  auto held_out = static_cast<size_t>(std::llround(validation_fraction * static_cast<double>(pairs.size())));
  if (!pairs.empty() && held_out >= pairs.size()) held_out = pairs.size() - 1;
  PairSplit split;
  const auto cut = pairs.begin() + static_cast<std::ptrdiff_t>(pairs.size() - held_out);
  split.validation.assign(std::make_move_iterator(cut), std::make_move_iterator(pairs.end()));
  pairs.erase(cut, pairs.end());
  split.train = std::move(pairs);
  return split;
}

std::uint64_t epoch_seed(std::uint64_t train_seed, std::uint64_t shuffle_seed, int epoch) {
  return splitmix64(splitmix64(splitmix64(train_seed) ^ shuffle_seed) + static_cast<std::uint64_t>(epoch));
}

TrainResult train(const ModelSpec& spec, const DatasetConfig& dataset, const TrainConfig& config,
                  const TrainOptions& options) {
  validate(spec);
  validate(dataset);
  validate(config, spec.n_classes);
  if (dataset.n_classes != spec.n_classes) {
    throw ConfigError("dataset n_classes=" + std::to_string(dataset.n_classes) +
                      " does not match model n_classes=" + std::to_string(spec.n_classes));
  }
  if (dataset.input_height != spec.input_height || dataset.input_width != spec.input_width) {
    throw ConfigError("dataset input dims do not match the model spec");
  }
  auto log = [&](const std::string& line) {
    if (options.log) options.log(line);
  };

  PairSplit split = split_pairs(scan_training_pairs(dataset), config.validation_fraction);
  if (split.train.empty()) throw ConfigError("no training pairs in '" + dataset.images_dir.string() + "'");

  SegmentationModel model = assemble_model(spec, config.seed);
  Optimizer optimizer(optimizer_config(config));
  TrainHistory history;
  std::optional<double> best_score;
  int first_epoch = 1;

  if (options.resume_from) {
    TrainingState state;
    model = load_checkpoint(*options.resume_from, spec, &state);
    const auto& meta = state.meta;
    if (!meta.is_object() || !meta.contains("epochs_completed")) {
      throw CheckpointError("checkpoint '" + options.resume_from->string() + "' has no training state");
    }
    const std::string kind = meta.value("optimizer", "");
    if (kind != to_string(config.optimizer_kind)) {
      throw ConfigError("checkpoint was trained with optimizer '" + kind + "', config requests '" +
                        std::string(to_string(config.optimizer_kind)) + "'");
    }
    optimizer.load_state(meta.at("optimizer_steps").get<std::int64_t>(), state.optimizer_slots);
    for (const auto& r : meta.value("history", nlohmann::json::array())) {
      history.epochs.push_back(epoch_record_from_json(r));
    }
    if (!meta.at("best_score").is_null()) best_score = meta.at("best_score").get<double>();
    first_epoch = meta.at("epochs_completed").get<int>() + 1;
    log("resuming after epoch " + std::to_string(first_epoch - 1));
  } else if (options.initialize) {
    options.initialize(model);
  }

  const bool checkpointing = !config.checkpoint_dir.empty();
  if (checkpointing) fs::create_directories(config.checkpoint_dir);
  const LossWeighting weighting{config.class_weights, config.ignore_index};

  for (int epoch = first_epoch; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    BatchIterator batches(split.train, dataset, static_cast<size_t>(config.batch_size),
                          epoch_seed(config.seed, static_cast<std::uint64_t>(dataset.shuffle_seed), epoch));
    double loss_sum = 0.0;
    std::int64_t samples = 0, correct = 0, pixels = 0;
    int batch_index = 0;
    while (auto batch = batches.next()) {
      ++batch_index;
      const auto where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index);
      const Index n = batch->images.batch();
      const Var images(std::move(batch->images));
      ModelOutput out;
      Var loss;
      try {
        out = model.forward_graph(images, ForwardContext{true});
        loss = segmentation_loss(out, batch->labels, weighting);
      } catch (const TrainingError& e) {
        throw TrainingError(where + ": " + e.what());
      }
      const float value = loss.value()[0];
      if (!std::isfinite(value)) throw TrainingError(where + ": non-finite loss");

      const auto predicted = predictions_for(out.probs.value(), batch->labels);
      for (size_t i = 0; i < predicted.size(); ++i) {
        correct += (predicted[i] == batch->labels[i]).count();
        pixels += predicted[i].size();
      }
      loss_sum += static_cast<double>(value) * static_cast<double>(n);
      samples += n;

      backward(loss);
      optimizer.step(model.parameters());
    }

    EpochRecord record;
    record.epoch = epoch;
    record.loss = loss_sum / static_cast<double>(samples);
    record.pixel_accuracy = static_cast<double>(correct) / static_cast<double>(pixels);
    if (!split.validation.empty()) {
      record.validation_miou = mean_iou(confusion_over(model, split.validation, dataset));
    }
    record.optimizer_steps = optimizer.steps();
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history.epochs.push_back(record);

    const double score = record.validation_miou ? *record.validation_miou : -record.loss;
    const bool improved = !best_score || score > *best_score;
    if (improved) best_score = score;

    if (checkpointing) {
      TrainingState state;
      nlohmann::json records = nlohmann::json::array();
      for (const auto& r : history.epochs) records.push_back(to_json(r));
      state.meta = {{"epochs_completed", epoch},
                    {"optimizer", std::string(to_string(config.optimizer_kind))},
                    {"optimizer_steps", optimizer.steps()},
                    {"best_score", *best_score},
                    {"history", records}};
      state.optimizer_slots = optimizer.state();
      const Checkpoint ck = make_checkpoint(model, &state);
      write_checkpoint(config.checkpoint_dir / "last.ckpt", ck);
      if (improved) write_checkpoint(config.checkpoint_dir / "best.ckpt", ck);
      if (config.keep_epoch_checkpoints) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch-%04d.ckpt", epoch);
        write_checkpoint(config.checkpoint_dir / name, ck);
      }
      write_text_atomically(config.checkpoint_dir / "history.jsonl", to_json_lines(history));
    }

    std::ostringstream line;
    line << "epoch " << epoch << "/" << config.epochs << " loss " << record.loss << " pixel_accuracy "
         << record.pixel_accuracy;
    if (record.validation_miou) line << " val_miou " << *record.validation_miou;
    line << " (" << record.seconds << " s)";
    log(line.str());

    if (options.on_epoch && !options.on_epoch(record, model)) break;
  }
  return {std::move(model), std::move(history)};
}

ConfusionMatrix confusion_over(const SegmentationModel& model, std::span<const SamplePair> pairs,
                               const DatasetConfig& dataset) {
  DatasetConfig config = dataset;
  config.input_height = model.spec().input_height;
  config.input_width = model.spec().input_width;
  if (config.n_classes != model.spec().n_classes) {
    throw ConfigError("dataset n_classes=" + std::to_string(config.n_classes) +
                      " does not match model n_classes=" + std::to_string(model.spec().n_classes));
  }
  ConfusionMatrix cm(config.n_classes);
  constexpr size_t kChunk = 4;
  for (size_t begin = 0; begin < pairs.size(); begin += kChunk) {
    std::vector<SegmentationSample> samples;
    for (size_t i = begin; i < std::min(pairs.size(), begin + kChunk); ++i) {
      samples.push_back(load_sample(pairs[i], config));
    }
    Batch batch = stack_samples(std::move(samples));
    const auto predicted = predictions_for(model.forward(batch.images), batch.labels);
    for (size_t i = 0; i < predicted.size(); ++i) cm.add(predicted[i], batch.labels[i]);
  }
  return cm;
}

EvalReport evaluate_split(const SegmentationModel& model, const DatasetConfig& dataset,
                          std::vector<std::string> class_names, std::string method) {
  const auto pairs = scan_training_pairs(dataset);
  if (pairs.empty()) throw MetricError("no samples to evaluate in '" + dataset.images_dir.string() + "'");
  const ConfusionMatrix cm = confusion_over(model, pairs, dataset);
  if (class_names.empty()) {
    for (int i = 0; i < cm.n_classes(); ++i) class_names.push_back("class" + std::to_string(i));
  }
  if (method.empty()) method = display_name(model.spec());
  return build_report(cm, std::move(class_names), std::move(method));
}

}  // namespace segkit

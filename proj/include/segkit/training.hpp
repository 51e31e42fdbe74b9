#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segkit/architectures.hpp"
#include "segkit/dataio.hpp"
#include "segkit/metrics.hpp"
#include "segkit/ops.hpp"
#include "segkit/optim.hpp"

namespace segkit {

inline constexpr float kProbabilityEpsilon = 1e-7f;

struct TrainConfig {
  int epochs = 10;
  int batch_size = 4;
  double learning_rate = 1e-3;
  OptimizerKind optimizer_kind = OptimizerKind::kAdaptiveMoment;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::filesystem::path checkpoint_dir;  // empty: no files written
  std::uint64_t seed = 0;
  double validation_fraction = 0.0;
  std::vector<float> class_weights;  // empty: unweighted
  int ignore_index = -1;             // < 0: none
  bool keep_epoch_checkpoints = false;
};

// Throws ConfigError on violated invariants.
void validate(const TrainConfig& config);
void validate(const TrainConfig& config, int n_classes);

OptimizerConfig optimizer_config(const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double loss = 0.0;
  double pixel_accuracy = 0.0;  // batch-statistics forward during training
  std::optional<double> validation_miou;
  double seconds = 0.0;
  std::int64_t optimizer_steps = 0;  // cumulative
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;

  std::int64_t optimizer_steps() const { return epochs.empty() ? 0 : epochs.back().optimizer_steps; }
};

nlohmann::json to_json(const EpochRecord& record);
EpochRecord epoch_record_from_json(const nlohmann::json& j);
// One JSON object per line.
std::string to_json_lines(const TrainHistory& history);

// Pixel-wise cross-entropy of the model output against labels at output
// resolution. Uses the fused score path when scores already have label
// resolution; otherwise resizes the distributions to the labels.
Var segmentation_loss(const ModelOutput& output, std::span<const LabelGrid> truth,
                      const LossWeighting& weighting = {});

// Deterministic split: the last round(fraction * n) pairs of the sorted list
// are held out, keeping at least one pair for training.
struct PairSplit {
  std::vector<SamplePair> train;
  std::vector<SamplePair> validation;
};
PairSplit split_pairs(std::vector<SamplePair> pairs, double validation_fraction);

// Seed of the batch order for one epoch.
std::uint64_t epoch_seed(std::uint64_t train_seed, std::uint64_t shuffle_seed, int epoch);

// Return false to stop after this epoch (checkpoints are already written).
using EpochCallback = std::function<bool(const EpochRecord&, const SegmentationModel&)>;

struct TrainOptions {
  EpochCallback on_epoch;
  std::optional<std::filesystem::path> resume_from;
  // Runs on the freshly assembled model unless resuming, e.g. to import
  // pretrained weights.
  std::function<void(SegmentationModel&)> initialize;
  std::function<void(const std::string&)> log;
};

struct TrainResult {
  SegmentationModel model;
  TrainHistory history;
};

// Files in checkpoint_dir: last.ckpt (every epoch), best.ckpt (validation
// mIoU, or training loss without a validation split), epoch-NNNN.ckpt when
// keep_epoch_checkpoints is set, and history.jsonl.
TrainResult train(const ModelSpec& spec, const DatasetConfig& dataset, const TrainConfig& config,
                  const TrainOptions& options = {});

// Confusion matrix of argmax predictions at annotation resolution.
ConfusionMatrix confusion_over(const SegmentationModel& model, std::span<const SamplePair> pairs,
                               const DatasetConfig& dataset);

// Empty names become "class<i>"; an empty method becomes the display name of
// the model. Throws MetricError on an empty dataset.
EvalReport evaluate_split(const SegmentationModel& model, const DatasetConfig& dataset,
                          std::vector<std::string> class_names = {}, std::string method = "");

}  // namespace segkit

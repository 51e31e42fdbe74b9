#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segkit/tensor.hpp"

namespace segkit {

struct DatasetConfig {
  std::filesystem::path images_dir;
  std::filesystem::path annotations_dir;
  int n_classes = 2;
  int input_height = 96;
  int input_width = 96;
  int output_height = 96;
  int output_width = 96;
  std::int64_t shuffle_seed = 0;
  // Optional per-channel normalization applied after scaling to [0, 1].
  std::optional<std::array<float, 3>> channel_mean;
  std::optional<std::array<float, 3>> channel_std;
};

// Throws ConfigError on violated invariants (n_classes >= 2, positive dims,
// output dims <= input dims).
void validate(const DatasetConfig& config);

struct SamplePair {
  std::string id;  // shared file stem
  std::filesystem::path image;
  std::filesystem::path annotation;
};

struct ScanResult {
  std::vector<SamplePair> pairs;            // sorted by id
  std::vector<SamplePair> missing_annotations;  // annotation path left empty
};

// Matches `*.png` files of the two directories by stem. Throws ConfigError
// if either directory does not exist.
ScanResult scan_dataset(const DatasetConfig& config);

// As scan_dataset, but an image without annotation is fatal (DataError).
std::vector<SamplePair> scan_training_pairs(const DatasetConfig& config);

struct SegmentationSample {
  Tensorf image;     // input_height x input_width x 3, in [0, 1] unless normalized
  LabelGrid labels;  // output_height x output_width, in [0, n_classes)
  std::string source_id;
};

// Bilinear resize to input dims, scale to [0, 1], then optional
// per-channel normalization.
Tensorf prepare_image(const RgbImage& rgb, const DatasetConfig& config);

// Image: bilinear resize to input dims, then / 255. Annotation: nearest
// resize to output dims. Throws DataError naming the file on a label
// >= n_classes, IoError on unreadable files.
SegmentationSample load_sample(const std::filesystem::path& image_path,
                               const std::filesystem::path& annotation_path,
                               const DatasetConfig& config);
SegmentationSample load_sample(const SamplePair& pair, const DatasetConfig& config);

struct DatasetReport {
  struct OutOfRange {
    std::string id;
    std::filesystem::path annotation;
    int max_label = 0;
  };
  struct Unreadable {
    std::string id;
    std::filesystem::path file;
    std::string message;
  };

  std::size_t n_pairs = 0;
  std::vector<SamplePair> missing_annotations;
  std::vector<OutOfRange> out_of_range_ids;
  std::vector<Unreadable> unreadable;
  std::vector<std::int64_t> class_histogram;  // pixels of valid pairs per class

  bool clean() const {
    return missing_annotations.empty() && out_of_range_ids.empty() && unreadable.empty();
  }
};

// Full scan that records defects instead of throwing. Only a missing
// directory (ConfigError) escapes.
DatasetReport verify_dataset(const DatasetConfig& config);

nlohmann::json to_json(const DatasetReport& report);
std::string render_text(const DatasetReport& report);

// Seeded permutation of [0, n); identical seeds give identical orders on
// every platform.
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed);

struct Batch {
  Tensorf images;  // B x H x W x 3
  std::vector<LabelGrid> labels;
  std::vector<std::string> ids;
};

Batch stack_samples(std::vector<SegmentationSample> samples);

// One epoch over `pairs` in seeded order; the final batch may be short.
class BatchIterator {
 public:
  BatchIterator(std::vector<SamplePair> pairs, DatasetConfig config, std::size_t batch_size,
                std::uint64_t epoch_seed);

  std::optional<Batch> next();
  std::size_t num_batches() const;
  // Pair order for this epoch.
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  std::vector<SamplePair> pairs_;
  DatasetConfig config_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Throws ConfigError for an empty pair list or batch_size < 1.
BatchIterator iterate_batches(std::vector<SamplePair> pairs, const DatasetConfig& config,
                              std::size_t batch_size, std::uint64_t epoch_seed);

}  // namespace segkit

#include "segkit/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "segkit/image_io.hpp"

namespace segkit {

namespace fs = std::filesystem;

void validate(const DatasetConfig& config) {
  if (config.n_classes < 2 || config.n_classes > 256) {
    throw ConfigError("n_classes must be in [2, 256], got " + std::to_string(config.n_classes));
  }
  if (config.input_height <= 0 || config.input_width <= 0 || config.output_height <= 0 ||
      config.output_width <= 0) {
    throw ConfigError("input and output dims must be positive");
  }
  if (config.output_height > config.input_height || config.output_width > config.input_width) {
    throw ConfigError("output dims must not exceed input dims");
  }
  if (config.channel_std) {
    for (float s : *config.channel_std) {
      if (!(s > 0.0f)) throw ConfigError("channel_std entries must be positive");
    }
  }
}

namespace {

bool is_png(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png";
}

std::map<std::string, fs::path> list_pngs(const fs::path& dir, const char* what) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) {
    throw ConfigError(std::string(what) + " directory '" + dir.string() + "' does not exist");
  }
  std::map<std::string, fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_png(entry.path())) {
      files.emplace(entry.path().stem().string(), entry.path());
    }
  }
  return files;
}

void check_label_range(const LabelGrid& labels, int n_classes, const fs::path& file) {
  if (labels.size() == 0) return;
  const int max_label = labels.maxCoeff();
  if (max_label >= n_classes) {
    throw DataError("annotation '" + file.string() + "' contains label " + std::to_string(max_label) +
                    " but n_classes is " + std::to_string(n_classes));
  }
}

}  // namespace

ScanResult scan_dataset(const DatasetConfig& config) {
  const auto images = list_pngs(config.images_dir, "images");
  const auto annotations = list_pngs(config.annotations_dir, "annotations");
  ScanResult result;
  for (const auto& [stem, image] : images) {
    auto it = annotations.find(stem);
    if (it == annotations.end()) {
      result.missing_annotations.push_back({stem, image, {}});
    } else {
      result.pairs.push_back({stem, image, it->second});
    }
  }
  return result;
}

std::vector<SamplePair> scan_training_pairs(const DatasetConfig& config) {
  ScanResult scan = scan_dataset(config);
  if (!scan.missing_annotations.empty()) {
    throw DataError("image '" + scan.missing_annotations.front().image.string() +
                    "' has no matching annotation");
  }
  return std::move(scan.pairs);
}

Tensorf prepare_image(const RgbImage& rgb, const DatasetConfig& config) {
  Tensorf image = resize_rgb_bilinear(rgb, config.input_height, config.input_width);
  image.array() /= 255.0f;
  if (config.channel_mean || config.channel_std) {
    const std::array<float, 3> mean = config.channel_mean.value_or(std::array<float, 3>{0, 0, 0});
    const std::array<float, 3> stddev = config.channel_std.value_or(std::array<float, 3>{1, 1, 1});
    auto pixels = image.matrix();
    for (Index c = 0; c < 3; ++c) {
      pixels.col(c).array() = (pixels.col(c).array() - mean[static_cast<size_t>(c)]) /
                              stddev[static_cast<size_t>(c)];
    }
  }
  return image;
}

SegmentationSample load_sample(const fs::path& image_path, const fs::path& annotation_path,
                               const DatasetConfig& config) {
  SegmentationSample sample;
  sample.source_id = image_path.stem().string();

  sample.image = prepare_image(read_png_rgb(image_path), config);

  const LabelGrid raw = read_png_labels(annotation_path);
  check_label_range(raw, config.n_classes, annotation_path);
  sample.labels = resize_labels_nearest(raw, config.output_height, config.output_width);
  return sample;
}

SegmentationSample load_sample(const SamplePair& pair, const DatasetConfig& config) {
  SegmentationSample sample = load_sample(pair.image, pair.annotation, config);
  sample.source_id = pair.id;
  return sample;
}

DatasetReport verify_dataset(const DatasetConfig& config) {
  validate(config);
  const ScanResult scan = scan_dataset(config);
  DatasetReport report;
  report.n_pairs = scan.pairs.size();
  report.missing_annotations = scan.missing_annotations;
  report.class_histogram.assign(static_cast<size_t>(config.n_classes), 0);

  for (const auto& pair : scan.pairs) {
    try {
      (void)read_png_rgb(pair.image);
    } catch (const Error& e) {
      report.unreadable.push_back({pair.id, pair.image, e.what()});
      continue;
    }
    LabelGrid labels;
    try {
      labels = read_png_labels(pair.annotation);
    } catch (const Error& e) {
      report.unreadable.push_back({pair.id, pair.annotation, e.what()});
      continue;
    }
    const int max_label = labels.size() ? labels.maxCoeff() : 0;
    if (max_label >= config.n_classes) {
      report.out_of_range_ids.push_back({pair.id, pair.annotation, max_label});
      continue;
    }
    for (Index i = 0; i < labels.size(); ++i) {
      ++report.class_histogram[static_cast<size_t>(labels.data()[i])];
    }
  }
  return report;
}

nlohmann::json to_json(const DatasetReport& report) {
  nlohmann::json j;
  j["n_pairs"] = report.n_pairs;
  j["clean"] = report.clean();
  j["missing_annotations"] = nlohmann::json::array();
  for (const auto& m : report.missing_annotations) {
    j["missing_annotations"].push_back({{"id", m.id}, {"image", m.image.string()}});
  }
  j["out_of_range_ids"] = nlohmann::json::array();
  for (const auto& o : report.out_of_range_ids) {
    j["out_of_range_ids"].push_back(
        {{"id", o.id}, {"annotation", o.annotation.string()}, {"max_label", o.max_label}});
  }
  j["unreadable"] = nlohmann::json::array();
  for (const auto& u : report.unreadable) {
    j["unreadable"].push_back({{"id", u.id}, {"file", u.file.string()}, {"error", u.message}});
  }
  j["class_histogram"] = report.class_histogram;
  return j;
}

std::string render_text(const DatasetReport& report) {
  std::ostringstream os;
  os << "pairs: " << report.n_pairs << '\n';
  os << "missing annotations: " << report.missing_annotations.size() << '\n';
  for (const auto& m : report.missing_annotations) os << "  " << m.image.string() << '\n';
  os << "out-of-range labels: " << report.out_of_range_ids.size() << '\n';
  for (const auto& o : report.out_of_range_ids) {
    os << "  " << o.annotation.string() << " (max label " << o.max_label << ")\n";
  }
  os << "unreadable files: " << report.unreadable.size() << '\n';
  for (const auto& u : report.unreadable) os << "  " << u.file.string() << ": " << u.message << '\n';
  os << "class histogram:";
  for (auto count : report.class_histogram) os << ' ' << count;
  os << '\n';
  os << (report.clean() ? "status: clean" : "status: defects found") << '\n';
  return os.str();
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 engine(seed);
  // Fisher-Yates with rejection sampling for an unbiased, portable draw.
  for (std::size_t i = n; i > 1; --i) {
    const std::uint64_t bound = i;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t draw;
    do {
      draw = engine();
    } while (draw >= limit);
    std::swap(order[i - 1], order[static_cast<std::size_t>(draw % bound)]);
  }
  return order;
}

Batch stack_samples(std::vector<SegmentationSample> samples) {
  if (samples.empty()) throw ConfigError("cannot stack an empty batch");
  const Shape image_shape = samples.front().image.shape();
  Batch batch;
  batch.images = Tensorf({static_cast<Index>(samples.size()), image_shape[0], image_shape[1], image_shape[2]});
  const Index stride = image_shape.numel();
  for (size_t i = 0; i < samples.size(); ++i) {
    require_shape(samples[i].image.shape(), image_shape, "batched image");
    std::copy(samples[i].image.data(), samples[i].image.data() + stride,
              batch.images.data() + static_cast<Index>(i) * stride);
    batch.labels.push_back(std::move(samples[i].labels));
    batch.ids.push_back(std::move(samples[i].source_id));
  }
  return batch;
}

BatchIterator::BatchIterator(std::vector<SamplePair> pairs, DatasetConfig config,
                             std::size_t batch_size, std::uint64_t epoch_seed)
    : pairs_(std::move(pairs)), config_(std::move(config)), batch_size_(batch_size) {
  if (pairs_.empty()) throw ConfigError("cannot iterate over an empty dataset");
  if (batch_size_ < 1) throw ConfigError("batch_size must be >= 1");
  order_ = epoch_permutation(pairs_.size(), epoch_seed);
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(cursor_ + batch_size_, order_.size());
  std::vector<SegmentationSample> samples;
  samples.reserve(end - cursor_);
  for (; cursor_ < end; ++cursor_) samples.push_back(load_sample(pairs_[order_[cursor_]], config_));
  return stack_samples(std::move(samples));
}

std::size_t BatchIterator::num_batches() const {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

BatchIterator iterate_batches(std::vector<SamplePair> pairs, const DatasetConfig& config,
                              std::size_t batch_size, std::uint64_t epoch_seed) {
  return BatchIterator(std::move(pairs), config, batch_size, epoch_seed);
}

}  // namespace segkit

#include "testing/fixtures.hpp"

#include <cstdlib>
#include <string>

#include "segkit/image_io.hpp"

namespace segkit::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
  std::string pattern = (fs::temp_directory_path() / "segkit-test-XXXXXX").string();
  if (!mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
  path_ = pattern;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::array<std::uint8_t, 3> synthetic_color(int label) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> kColors = {{
      {30, 30, 30}, {220, 40, 40}, {40, 200, 60}, {50, 80, 230},
      {230, 220, 40}, {200, 60, 220}, {40, 210, 210}, {240, 240, 240},
  }};
  return kColors[static_cast<size_t>(label) % kColors.size()];
}

LabelGrid synthetic_layout(int size, int n_classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int cells = size / 16;
  LabelGrid labels = LabelGrid::Zero(size, size);
  std::uniform_int_distribution<int> cell(0, cells - 1);
  std::uniform_int_distribution<int> extent(1, std::max(1, cells / 2));
  for (int label = 1; label < n_classes; ++label) {
    for (int r = 0; r < 2; ++r) {
      const int y = cell(rng), x = cell(rng);
      const int h = std::min(extent(rng), cells - y), w = std::min(extent(rng), cells - x);
      labels.block(16 * y, 16 * x, 16 * h, 16 * w).setConstant(label);
    }
  }
  return labels;
}

RgbImage paint(const LabelGrid& labels) {
  RgbImage image(Shape{labels.rows(), labels.cols(), 3});
  for (Index i = 0; i < labels.size(); ++i) {
    const auto c = synthetic_color(labels.data()[i]);
    for (Index ch = 0; ch < 3; ++ch) image[i * 3 + ch] = c[static_cast<size_t>(ch)];
  }
  return image;
}

DatasetConfig write_synthetic_dataset(const fs::path& root, int count, int size, int n_classes,
                                      std::uint64_t seed) {
  DatasetConfig config;
  config.images_dir = root / "images";
  config.annotations_dir = root / "annotations";
  fs::create_directories(config.images_dir);
  fs::create_directories(config.annotations_dir);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%03d.png", i);
    const LabelGrid labels = synthetic_layout(size, n_classes, seed * 7919 + static_cast<std::uint64_t>(i));
    write_png_rgb(config.images_dir / name, paint(labels));
    write_png_labels(config.annotations_dir / name, labels);
  }
  config.n_classes = n_classes;
  config.input_height = config.input_width = size;
  config.output_height = config.output_width = size;
  return config;
}

LabelGrid random_labels(Index rows, Index cols, int n_classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dist(0, n_classes - 1);
  LabelGrid g(rows, cols);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = dist(rng);
  return g;
}

Tensorf random_tensor(const Shape& shape, std::mt19937_64& rng, float scale) {
  std::normal_distribution<float> dist(0.0f, scale);
  Tensorf t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace segkit::testing

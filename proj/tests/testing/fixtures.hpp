#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "segkit/dataio.hpp"
#include "segkit/tensor.hpp"

namespace segkit::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Class i of the synthetic data is painted with this color.
std::array<std::uint8_t, 3> synthetic_color(int label);

// Layout of 16-pixel aligned rectangles over a background of class 0.
LabelGrid synthetic_layout(int size, int n_classes, std::uint64_t seed);

RgbImage paint(const LabelGrid& labels);

// Writes `count` image/annotation pairs named sample_000.png, ... under
// root/images and root/annotations, and returns the matching config.
DatasetConfig write_synthetic_dataset(const std::filesystem::path& root, int count, int size, int n_classes,
                                      std::uint64_t seed);

LabelGrid random_labels(Index rows, Index cols, int n_classes, std::mt19937_64& rng);

Tensorf random_tensor(const Shape& shape, std::mt19937_64& rng, float scale = 1.0f);

}  // namespace segkit::testing

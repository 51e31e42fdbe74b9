#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segkit/architectures.hpp"
#include "segkit/dataio.hpp"

namespace segkit {

using Rgb = std::array<std::uint8_t, 3>;

struct ClassPalette {
  struct Entry {
    std::string name;
    Rgb color{};
  };
  std::vector<Entry> entries;

  int size() const { return static_cast<int>(entries.size()); }
  const Rgb& color(int label) const { return entries[static_cast<size_t>(label)].color; }
};

// Class 0 is dark gray; classes 1..n-1 get evenly spaced hues at full
// saturation and value. Names default to "class<i>".
ClassPalette default_palette(int n_classes, const std::vector<std::string>& names = {});

// JSON: [{"name": "Sky", "color": [128, 128, 128]}, ...]. A bare list of
// [r, g, b] triples is accepted too.
ClassPalette palette_from_json(const nlohmann::json& j);
ClassPalette load_palette(const std::filesystem::path& path);
nlohmann::json to_json(const ClassPalette& palette);

// Per-pixel argmax over the last axis of batch item `n`; ties go to the
// lowest class index.
LabelGrid argmax_labels(const Tensorf& probs, Index n = 0);
std::vector<LabelGrid> argmax_batch(const Tensorf& probs);

// `image` is H x W x 3 or 1 x H x W x 3, already prepared for the model.
// Returns labels at input resolution.
LabelGrid predict_labels(const SegmentationModel& model, const Tensorf& image);

// Reads, prepares and labels one image file. The grid has input
// resolution of the model.
LabelGrid predict_file(const SegmentationModel& model, const std::filesystem::path& image,
                       const DatasetConfig& preprocessing);

// Throws DataError on a label outside the palette.
RgbImage colorize(const LabelGrid& labels, const ClassPalette& palette);

// Inverse of colorize for an injective palette; throws DataError on an
// unknown or ambiguous color.
LabelGrid decolorize(const RgbImage& image, const ClassPalette& palette);

// round(alpha * palette color + (1 - alpha) * image) per channel.
RgbImage overlay(const RgbImage& image, const LabelGrid& labels, const ClassPalette& palette,
                 double alpha = 0.5);

}  // namespace segkit

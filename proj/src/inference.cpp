#include "segkit/inference.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "segkit/image_io.hpp"

namespace segkit {

namespace {

Rgb hue_to_rgb(double hue) {
  // HSV with s = v = 1; hue in [0, 1).
  const double h6 = hue * 6.0;
  const int sector = static_cast<int>(std::floor(h6)) % 6;
  const double f = h6 - std::floor(h6);
  const auto up = static_cast<std::uint8_t>(std::lround(255.0 * f));
  const auto down = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - f)));
  switch (sector) {
    case 0: return {255, up, 0};
    case 1: return {down, 255, 0};
    case 2: return {0, 255, up};
    case 3: return {0, down, 255};
    case 4: return {up, 0, 255};
    default: return {255, 0, down};
  }
}

void check_palette_range(const LabelGrid& labels, const ClassPalette& palette) {
  if (labels.size() == 0) return;
  if (labels.minCoeff() < 0 || labels.maxCoeff() >= palette.size()) {
    throw DataError("label outside palette of " + std::to_string(palette.size()) + " colors");
  }
}

}  // namespace

ClassPalette default_palette(int n_classes, const std::vector<std::string>& names) {
  if (n_classes < 1) throw ConfigError("palette needs at least one class");
  if (!names.empty() && static_cast<int>(names.size()) != n_classes) {
    throw ConfigError("palette has " + std::to_string(names.size()) + " names for " +
                      std::to_string(n_classes) + " classes");
  }
  ClassPalette palette;
  for (int i = 0; i < n_classes; ++i) {
    ClassPalette::Entry e;
    e.name = names.empty() ? "class" + std::to_string(i) : names[static_cast<size_t>(i)];
    e.color = i == 0 ? Rgb{64, 64, 64} : hue_to_rgb(static_cast<double>(i - 1) / (n_classes - 1));
    palette.entries.push_back(std::move(e));
  }
  return palette;
}

ClassPalette palette_from_json(const nlohmann::json& j) {
  const nlohmann::json& list = j.is_object() && j.contains("classes") ? j.at("classes") : j;
  if (!list.is_array() || list.empty()) throw ConfigError("palette must be a non-empty list");
  ClassPalette palette;
  try {
    for (const auto& item : list) {
      ClassPalette::Entry e;
      const nlohmann::json* color = &item;
      if (item.is_object()) {
        e.name = item.value("name", "class" + std::to_string(palette.size()));
        color = &item.at("color");
      } else {
        e.name = "class" + std::to_string(palette.size());
      }
      if (!color->is_array() || color->size() != 3) throw ConfigError("palette color must be [r, g, b]");
      for (size_t c = 0; c < 3; ++c) {
        const int v = (*color)[c].get<int>();
        if (v < 0 || v > 255) throw ConfigError("palette color value out of [0, 255]");
        e.color[c] = static_cast<std::uint8_t>(v);
      }
      palette.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed palette: ") + e.what());
  }
  return palette;
}

ClassPalette load_palette(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open palette '" + path.string() + "'");
  try {
    return palette_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("palette '" + path.string() + "': " + e.what());
  }
}

nlohmann::json to_json(const ClassPalette& palette) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& e : palette.entries) {
    list.push_back({{"name", e.name}, {"color", {e.color[0], e.color[1], e.color[2]}}});
  }
  return list;
}

LabelGrid argmax_labels(const Tensorf& probs, Index n) {
  if (probs.rank() != 4) throw ShapeError("argmax expects an NHWC tensor, got " + probs.shape().str());
  if (n < 0 || n >= probs.batch()) throw ShapeError("batch index out of range");
  const Index h = probs.height(), w = probs.width(), k = probs.channels();
  LabelGrid labels(h, w);
  const float* base = probs.data() + n * h * w * k;
  for (Index i = 0; i < h * w; ++i) {
    const float* p = base + i * k;
    Index best = 0;
    // Strict comparison keeps the lowest index on ties.
    for (Index c = 1; c < k; ++c) {
      if (p[c] > p[best]) best = c;
    }
    labels.data()[i] = static_cast<std::int32_t>(best);
  }
  return labels;
}

std::vector<LabelGrid> argmax_batch(const Tensorf& probs) {
  std::vector<LabelGrid> out;
  for (Index n = 0; n < probs.batch(); ++n) out.push_back(argmax_labels(probs, n));
  return out;
}

LabelGrid predict_labels(const SegmentationModel& model, const Tensorf& image) {
  if (image.rank() == 3) {
    return argmax_labels(model.forward(image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)})));
  }
  if (image.rank() != 4 || image.batch() != 1) {
    throw ShapeError("predict_labels expects one H x W x 3 image, got " + image.shape().str());
  }
  return argmax_labels(model.forward(image));
}

LabelGrid predict_file(const SegmentationModel& model, const std::filesystem::path& image,
                       const DatasetConfig& preprocessing) {
  DatasetConfig config = preprocessing;
  config.input_height = model.spec().input_height;
  config.input_width = model.spec().input_width;
  return predict_labels(model, prepare_image(read_png_rgb(image), config));
}

RgbImage colorize(const LabelGrid& labels, const ClassPalette& palette) {
  check_palette_range(labels, palette);
  RgbImage out(Shape{labels.rows(), labels.cols(), 3});
  for (Index i = 0; i < labels.size(); ++i) {
    const Rgb& c = palette.color(labels.data()[i]);
    for (Index ch = 0; ch < 3; ++ch) out[i * 3 + ch] = c[static_cast<size_t>(ch)];
  }
  return out;
}

LabelGrid decolorize(const RgbImage& image, const ClassPalette& palette) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("expected an H x W x 3 image");
  std::map<Rgb, int> lookup;
  for (int i = 0; i < palette.size(); ++i) {
    if (!lookup.emplace(palette.color(i), i).second) {
      throw DataError("palette is not injective; cannot invert colors");
    }
  }
  LabelGrid labels(image.dim(0), image.dim(1));
  for (Index i = 0; i < labels.size(); ++i) {
    const Rgb c{image[i * 3], image[i * 3 + 1], image[i * 3 + 2]};
    auto it = lookup.find(c);
    if (it == lookup.end()) throw DataError("color not in palette");
    labels.data()[i] = it->second;
  }
  return labels;
}

RgbImage overlay(const RgbImage& image, const LabelGrid& labels, const ClassPalette& palette,
                 double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("overlay alpha must be in [0, 1]");
  if (image.rank() != 3 || image.dim(2) != 3 || image.dim(0) != labels.rows() || image.dim(1) != labels.cols()) {
    throw ShapeError("overlay image " + image.shape().str() + " does not match labels " +
                     std::to_string(labels.rows()) + "x" + std::to_string(labels.cols()));
  }
  check_palette_range(labels, palette);
  RgbImage out(image.shape());
  for (Index i = 0; i < labels.size(); ++i) {
    const Rgb& c = palette.color(labels.data()[i]);
    for (Index ch = 0; ch < 3; ++ch) {
      const double v = alpha * c[static_cast<size_t>(ch)] + (1.0 - alpha) * image[i * 3 + ch];
      out[i * 3 + ch] = static_cast<std::uint8_t>(std::lround(v));
    }
  }
  return out;
}

}  // namespace segkit

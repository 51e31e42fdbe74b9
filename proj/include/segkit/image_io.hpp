#pragma once

#include <filesystem>

#include "segkit/tensor.hpp"

namespace segkit {

// PNG decode to 8-bit RGB (H x W x 3). Gray, palette and alpha inputs are
// converted; 16-bit samples are reduced to 8 bits.
RgbImage read_png_rgb(const std::filesystem::path& path);

// PNG decode of a class-index annotation. Accepts 8-bit grayscale or
// palette images and returns the raw sample (or palette index) per pixel.
// Throws DataError for color images.
LabelGrid read_png_labels(const std::filesystem::path& path);

void write_png_rgb(const std::filesystem::path& path, const RgbImage& image);

// Writes an 8-bit single-channel class-index image. Labels must be in
// [0, 255].
void write_png_labels(const std::filesystem::path& path, const LabelGrid& labels);

// Bilinear resize (half-pixel centers) of an RGB image. The result stays
// real-valued in [0, 255], unrounded.
Tensorf resize_rgb_bilinear(const RgbImage& image, Index out_height, Index out_width);

// Nearest-neighbor resize; never introduces a label absent from the input.
LabelGrid resize_labels_nearest(const LabelGrid& labels, Index out_height, Index out_width);

}  // namespace segkit

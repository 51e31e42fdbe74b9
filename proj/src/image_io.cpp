#include "segkit/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <vector>

#include "segkit/ops.hpp"

namespace segkit {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return f;
}

[[noreturn]] void png_error_handler(png_structp png, png_const_charp message) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = message;
  png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

struct DecodedPng {
  png_uint_32 width = 0, height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

enum class DecodeMode { kRgb, kIndex };

DecodedPng decode(const std::filesystem::path& path, DecodeMode mode) {
  FilePtr file = open_file(path, "rb");
  std::uint8_t signature[8];
  if (std::fread(signature, 1, 8, file.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0) {
    throw IoError("'" + path.string() + "' is not a PNG file");
  }

  std::string error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_error_handler,
                                           png_warning_handler);
  if (!png) throw IoError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  DecodedPng out;
  std::vector<png_bytep> rows;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("cannot decode '" + path.string() + "': " + error);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (mode == DecodeMode::kRgb) {
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  } else {
    if (depth < 8) png_set_packing(png);
    if (color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);

  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  const size_t stride = png_get_rowbytes(png, info);
  out.pixels.resize(stride * out.height);
  rows.resize(out.height);
  for (png_uint_32 y = 0; y < out.height; ++y) rows[y] = out.pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  // Palette and gray images decode to one channel; only true color has more.
  if (mode == DecodeMode::kIndex && out.channels >= 3) {
    throw DataError("annotation '" + path.string() +
                    "' is a color image; expected a single-channel class-index image");
  }
  return out;
}

void encode(const std::filesystem::path& path, const std::uint8_t* pixels, Index height,
            Index width, int channels) {
  FilePtr file = open_file(path, "wb");
  std::string error;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_error_handler,
                                            png_warning_handler);
  if (!png) throw IoError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("cannot encode '" + path.string() + "': " + error);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Index y = 0; y < height; ++y) {
    rows[static_cast<size_t>(y)] = const_cast<png_bytep>(pixels + y * width * channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) throw IoError("cannot write '" + path.string() + "'");
}

}  // namespace

RgbImage read_png_rgb(const std::filesystem::path& path) {
  DecodedPng png = decode(path, DecodeMode::kRgb);
  if (png.channels != 3) throw IoError("unexpected channel count decoding '" + path.string() + "'");
  RgbImage image({static_cast<Index>(png.height), static_cast<Index>(png.width), 3});
  std::copy(png.pixels.begin(), png.pixels.end(), image.data());
  return image;
}

LabelGrid read_png_labels(const std::filesystem::path& path) {
  DecodedPng png = decode(path, DecodeMode::kIndex);
  if (png.channels != 1) {
    throw DataError("annotation '" + path.string() + "' has " + std::to_string(png.channels) +
                    " channels; expected 1");
  }
  LabelGrid labels(png.height, png.width);
  for (Index i = 0; i < labels.size(); ++i) {
    labels.data()[i] = png.pixels[static_cast<size_t>(i)];
  }
  return labels;
}

void write_png_rgb(const std::filesystem::path& path, const RgbImage& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw ShapeError("RGB image must be H x W x 3, got " + image.shape().str());
  }
  encode(path, image.data(), image.dim(0), image.dim(1), 3);
}

void write_png_labels(const std::filesystem::path& path, const LabelGrid& labels) {
  if (labels.size() && (labels.minCoeff() < 0 || labels.maxCoeff() > 255)) {
    throw DataError("labels outside [0, 255] cannot be stored as an 8-bit annotation");
  }
  std::vector<std::uint8_t> bytes(static_cast<size_t>(labels.size()));
  for (Index i = 0; i < labels.size(); ++i) {
    bytes[static_cast<size_t>(i)] = static_cast<std::uint8_t>(labels.data()[i]);
  }
  encode(path, bytes.data(), labels.rows(), labels.cols(), 1);
}

Tensorf resize_rgb_bilinear(const RgbImage& image, Index out_height, Index out_width) {
  Tensorf as_float = image.cast<float>().reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  if (out_height == image.dim(0) && out_width == image.dim(1)) {
    return as_float.reshaped({out_height, out_width, image.dim(2)});
  }
  return resize_bilinear(as_float, out_height, out_width).reshaped({out_height, out_width, image.dim(2)});
}

LabelGrid resize_labels_nearest(const LabelGrid& labels, Index out_height, Index out_width) {
  if (out_height == labels.rows() && out_width == labels.cols()) return labels;
  LabelGrid out(out_height, out_width);
  // Source index floor((dst + 0.5) * in / out), i.e. the input pixel whose
  // extent contains the output pixel center.
  for (Index y = 0; y < out_height; ++y) {
    const Index sy = std::min((2 * y + 1) * labels.rows() / (2 * out_height), labels.rows() - 1);
    for (Index x = 0; x < out_width; ++x) {
      const Index sx = std::min((2 * x + 1) * labels.cols() / (2 * out_width), labels.cols() - 1);
      out(y, x) = labels(sy, sx);
    }
  }
  return out;
}

}  // namespace segkit

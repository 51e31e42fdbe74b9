#include <gtest/gtest.h>

#include <fstream>

#include <algorithm>
#include <set>

#include "segkit/dataio.hpp"
#include "segkit/image_io.hpp"
#include "testing/fixtures.hpp"

namespace segkit {
namespace {

using testing::TempDir;
using testing::write_synthetic_dataset;

TEST(ImageIoTest, PngRoundTrips) {
  TempDir dir;
  std::mt19937_64 rng(1);
  const LabelGrid labels = testing::random_labels(5, 7, 200, rng);
  write_png_labels(dir / "l.png", labels);
  EXPECT_TRUE((read_png_labels(dir / "l.png") == labels).all());

  const RgbImage rgb = testing::paint(testing::random_labels(4, 6, 5, rng));
  write_png_rgb(dir / "c.png", rgb);
  const RgbImage back = read_png_rgb(dir / "c.png");
  ASSERT_EQ(back.shape(), rgb.shape());
  EXPECT_TRUE((back.array() == rgb.array()).all());
}

TEST(ImageIoTest, ColorAnnotationIsRejected) {
  TempDir dir;
  write_png_rgb(dir / "c.png", RgbImage(Shape{2, 2, 3}, 9));
  EXPECT_THROW(read_png_labels(dir / "c.png"), DataError);
}

TEST(ImageIoTest, NonPngIsAnIoError) {
  TempDir dir;
  std::ofstream(dir / "x.png") << "not an image";
  EXPECT_THROW(read_png_rgb(dir / "x.png"), IoError);
}

TEST(ImageIoTest, NearestLabelResizeSamplesPixelCenters) {
  LabelGrid labels(4, 4);
  for (int i = 0; i < 16; ++i) labels.data()[i] = i;
  const LabelGrid half = resize_labels_nearest(labels, 2, 2);
  // Centers of output pixels land on source rows/cols 1 and 3.
  EXPECT_EQ(half(0, 0), labels(1, 1));
  EXPECT_EQ(half(1, 1), labels(3, 3));
  EXPECT_TRUE((resize_labels_nearest(labels, 4, 4) == labels).all());
}

TEST(DatasetTest, ScanPairsByStemInSortedOrder) {
  TempDir dir;
  DatasetConfig config = write_synthetic_dataset(dir.path(), 3, 32, 3, 1);
  write_png_rgb(config.images_dir / "extra.png", RgbImage(Shape{32, 32, 3}, 0));
  const ScanResult scan = scan_dataset(config);
  ASSERT_EQ(scan.pairs.size(), 3u);
  EXPECT_TRUE(std::is_sorted(scan.pairs.begin(), scan.pairs.end(),
                             [](const auto& a, const auto& b) { return a.id < b.id; }));
  ASSERT_EQ(scan.missing_annotations.size(), 1u);
  EXPECT_EQ(scan.missing_annotations[0].id, "extra");
  EXPECT_THROW(scan_training_pairs(config), DataError);
}

TEST(DatasetTest, MissingDirectoryIsAConfigError) {
  DatasetConfig config;
  config.images_dir = "/nonexistent/images";
  config.annotations_dir = "/nonexistent/annotations";
  EXPECT_THROW(scan_dataset(config), ConfigError);
  EXPECT_THROW(verify_dataset(config), ConfigError);
}

TEST(DatasetTest, LoadSampleResizesAndScales) {
  TempDir dir;
  DatasetConfig config = write_synthetic_dataset(dir.path(), 1, 64, 3, 2);
  config.input_height = config.input_width = 32;
  config.output_height = config.output_width = 16;
  const auto pairs = scan_training_pairs(config);
  const SegmentationSample sample = load_sample(pairs[0], config);
  EXPECT_EQ(sample.image.shape(), Shape({32, 32, 3}));
  EXPECT_EQ(sample.labels.rows(), 16);
  EXPECT_GE(sample.image.array().minCoeff(), 0.0f);
  EXPECT_LE(sample.image.array().maxCoeff(), 1.0f);

  config.channel_mean = std::array<float, 3>{0.5f, 0.5f, 0.5f};
  config.channel_std = std::array<float, 3>{0.25f, 0.25f, 0.25f};
  const SegmentationSample normalized = load_sample(pairs[0], config);
  EXPECT_NEAR(normalized.image[0], (sample.image[0] - 0.5f) / 0.25f, 1e-5);
}

TEST(DatasetTest, OutOfRangeLabelNamesFileAndValue) {
  TempDir dir;
  DatasetConfig config = write_synthetic_dataset(dir.path(), 2, 32, 3, 3);
  write_png_labels(config.annotations_dir / "sample_001.png", LabelGrid::Constant(32, 32, 7));
  const auto pairs = scan_training_pairs(config);
  try {
    load_sample(pairs[1], config);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("sample_001.png"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find('7'), std::string::npos);
  }
}

TEST(VerifyTest, CleanDatasetHasHistogram) {
  TempDir dir;
  const DatasetConfig config = write_synthetic_dataset(dir.path(), 3, 32, 3, 4);
  const DatasetReport report = verify_dataset(config);
  EXPECT_TRUE(report.clean());
  EXPECT_EQ(report.n_pairs, 3u);
  ASSERT_EQ(report.class_histogram.size(), 3u);
  std::int64_t total = 0;
  for (auto c : report.class_histogram) total += c;
  EXPECT_EQ(total, 3 * 32 * 32);
}

TEST(VerifyTest, ReportsPlantedDefectsByName) {
  TempDir dir;
  const DatasetConfig config = write_synthetic_dataset(dir.path(), 3, 32, 3, 5);
  write_png_labels(config.annotations_dir / "sample_002.png", LabelGrid::Constant(32, 32, 5));
  write_png_rgb(config.images_dir / "orphan.png", RgbImage(Shape{32, 32, 3}, 0));
  write_png_rgb(config.annotations_dir / "sample_000.png", RgbImage(Shape{32, 32, 3}, 0));
  const DatasetReport report = verify_dataset(config);
  EXPECT_FALSE(report.clean());
  ASSERT_EQ(report.out_of_range_ids.size(), 1u);
  EXPECT_EQ(report.out_of_range_ids[0].id, "sample_002");
  EXPECT_EQ(report.out_of_range_ids[0].max_label, 5);
  ASSERT_EQ(report.missing_annotations.size(), 1u);
  EXPECT_EQ(report.missing_annotations[0].id, "orphan");
  ASSERT_EQ(report.unreadable.size(), 1u);
  EXPECT_EQ(report.unreadable[0].id, "sample_000");
  const std::string text = render_text(report);
  EXPECT_NE(text.find("orphan.png"), std::string::npos);
  EXPECT_NE(text.find("sample_002.png"), std::string::npos);
  EXPECT_EQ(to_json(report)["clean"], false);
}

TEST(BatchingTest, PermutationIsSeededAndComplete) {
  const auto a = epoch_permutation(50, 9);
  EXPECT_EQ(a, epoch_permutation(50, 9));
  EXPECT_NE(a, epoch_permutation(50, 10));
  EXPECT_EQ(std::set<size_t>(a.begin(), a.end()).size(), 50u);
  // Pinned draws, computed with a separate mt19937_64 implementation, so
  // the order stays identical across platforms.
  EXPECT_EQ(epoch_permutation(5, 0), (std::vector<std::size_t>{2, 0, 1, 3, 4}));
  EXPECT_EQ(epoch_permutation(10, 42), (std::vector<std::size_t>{1, 7, 9, 0, 3, 8, 4, 2, 5, 6}));
}

TEST(BatchingTest, FiveSamplesInBatchesOfTwo) {
  TempDir dir;
  const DatasetConfig config = write_synthetic_dataset(dir.path(), 5, 32, 3, 6);
  BatchIterator it = iterate_batches(scan_training_pairs(config), config, 2, 1);
  EXPECT_EQ(it.num_batches(), 3u);
  std::vector<Index> sizes;
  std::set<std::string> seen;
  while (auto batch = it.next()) {
    sizes.push_back(batch->images.batch());
    EXPECT_EQ(batch->labels.size(), static_cast<size_t>(batch->images.batch()));
    seen.insert(batch->ids.begin(), batch->ids.end());
  }
  EXPECT_EQ(sizes, (std::vector<Index>{2, 2, 1}));
  EXPECT_EQ(seen.size(), 5u);
}

TEST(DatasetConfigTest, Invariants) {
  DatasetConfig config;
  config.n_classes = 1;
  EXPECT_THROW(validate(config), ConfigError);
  config.n_classes = 3;
  config.output_height = 200;
  EXPECT_THROW(validate(config), ConfigError);
}

}  // namespace
}  // namespace segkit

#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>

#include "segkit/architectures.hpp"
#include "testing/fixtures.hpp"

namespace segkit {
namespace {

using Trace = std::vector<std::pair<std::string, Shape>>;

Tensorf random_images(Index n, Index size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensorf x({n, size, size, 3});
  for (Index i = 0; i < x.size(); ++i) x[i] = u(rng);
  return x;
}

Trace trace_of(SegmentationModel& model, const Tensorf& images) {
  Trace trace;
  NoGradGuard guard;
  ForwardContext ctx{false, &trace};
  model.forward_graph(Var(images), ctx);
  return trace;
}

Shape find(const Trace& trace, const std::string& name) {
  for (const auto& [n, s] : trace) {
    if (n == name) return s;
  }
  ADD_FAILURE() << "no trace entry " << name;
  return {};
}

// Channel counts of the pyramid levels, stated per encoder.
const std::map<EncoderKind, std::array<Index, 5>>& expected_channels() {
  static const std::map<EncoderKind, std::array<Index, 5>> table{
      {EncoderKind::kPlain, {32, 64, 128, 256, 512}},
      {EncoderKind::kVgg, {64, 128, 256, 512, 512}},
      {EncoderKind::kResNet50, {64, 256, 512, 1024, 2048}},
      {EncoderKind::kMobileNet, {64, 128, 256, 512, 1024}},
  };
  return table;
}

class EncoderTest : public ::testing::TestWithParam<EncoderKind> {};

TEST_P(EncoderTest, PyramidStridesAndChannels) {
  SegmentationModel model(make_spec(GetParam(), DecoderKind::kSegNet, 3, 64, 96));
  const Trace trace = trace_of(model, Tensorf({1, 64, 96, 3}, 0.5f));
  const auto& channels = expected_channels().at(GetParam());
  for (int level = 1; level <= 5; ++level) {
    const Index stride = Index{1} << level;
    EXPECT_EQ(find(trace, "encoder.f" + std::to_string(level)), Shape({1, 64 / stride, 96 / stride, channels[level - 1]}))
        << "level " << level;
  }
}

INSTANTIATE_TEST_SUITE_P(AllEncoders, EncoderTest, ::testing::ValuesIn(kAllEncoders),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(ModelTest, EveryPairingProducesDistributions) {
  for (EncoderKind e : kAllEncoders) {
    for (DecoderKind d : kAllDecoders) {
      SCOPED_TRACE(std::string(to_string(e)) + "+" + std::string(to_string(d)));
      const SegmentationModel model(make_spec(e, d, 4, 96, 96));
      const Tensorf probs = model.forward(random_images(1, 96, 1));
      ASSERT_EQ(probs.shape(), Shape({1, 96, 96, 4}));
      const auto m = probs.matrix();
      EXPECT_LE((m.rowwise().sum().array() - 1.0f).abs().maxCoeff(), 1e-5f);
      EXPECT_GE(m.minCoeff(), 0.0f);
    }
  }
}

TEST(ModelTest, UNetConcatenatesSameStrideLevels) {
  for (EncoderKind e : kAllEncoders) {
    SegmentationModel model(make_spec(e, DecoderKind::kUNet, 3, 64, 64));
    const Trace trace = trace_of(model, Tensorf({1, 64, 64, 3}, 0.1f));
    const auto& channels = expected_channels().at(e);
    for (int step = 1; step <= 4; ++step) {
      const std::string block = "decoder.up" + std::to_string(step);
      const Shape up = find(trace, block + ".upsampled");
      const Shape skip = find(trace, block + ".skip");
      EXPECT_EQ(up[1], skip[1]);
      EXPECT_EQ(up[2], skip[2]);
      EXPECT_EQ(skip[3], channels[static_cast<size_t>(4 - step)]);
      EXPECT_EQ(find(trace, block)[3], kDecoderWidths[static_cast<size_t>(step - 1)]);
    }
  }
}

TEST(ModelTest, PyramidPoolingWorksAtStrideEight) {
  SegmentationModel model(make_spec(EncoderKind::kPlain, DecoderKind::kPspNet, 3, 96, 96));
  const Trace trace = trace_of(model, Tensorf({1, 96, 96, 3}, 0.2f));
  EXPECT_EQ(find(trace, "decoder.psp.input"), Shape({1, 12, 12, 128}));
  for (int bins : kPyramidBins) {
    EXPECT_EQ(find(trace, "decoder.psp.pool" + std::to_string(bins)), Shape({1, bins, bins, 128}));
  }
  EXPECT_EQ(find(trace, "decoder.psp.fused"), Shape({1, 12, 12, 128}));
  EXPECT_EQ(find(trace, "scores"), Shape({1, 12, 12, 3}));
  EXPECT_EQ(find(trace, "probs"), Shape({1, 96, 96, 3}));
}

TEST(ModelTest, Fcn8WithZeroSkipScoresEqualsFcn32) {
  SegmentationModel fcn8(make_spec(EncoderKind::kPlain, DecoderKind::kFcn8, 5, 64, 64), 3);
  SegmentationModel fcn32(make_spec(EncoderKind::kPlain, DecoderKind::kFcn32, 5, 64, 64), 9);
  for (auto& p : fcn8.parameters().entries()) {
    if (p.name.rfind("decoder.score", 0) == 0) {
      p.var.mutable_value().set_zero();
    } else {
      Parameter* twin = fcn32.parameters().find(p.name);
      ASSERT_NE(twin, nullptr) << p.name;
      twin->var.mutable_value() = p.var.value();
    }
  }
  const Tensorf x = random_images(2, 64, 4);
  const Tensorf a = fcn8.forward(x);
  const Tensorf b = fcn32.forward(x);
  EXPECT_TRUE((a.array() == b.array()).all());
}

TEST(ModelTest, FullyConvolutional) {
  // Parameter shapes do not depend on the input size, and every weight is a
  // convolution kernel.
  for (EncoderKind e : kAllEncoders) {
    for (DecoderKind d : kAllDecoders) {
      const SegmentationModel small(make_spec(e, d, 3, 96, 96));
      const SegmentationModel large(make_spec(e, d, 3, 192, 96));
      ASSERT_EQ(small.parameters().entries().size(), large.parameters().entries().size());
      for (size_t i = 0; i < small.parameters().entries().size(); ++i) {
        const auto& p = small.parameters().entries()[i];
        EXPECT_EQ(p.name, large.parameters().entries()[i].name);
        EXPECT_EQ(p.var.shape(), large.parameters().entries()[i].var.shape());
        if (p.name.ends_with(".kernel")) {
          EXPECT_EQ(p.var.shape().rank(), 4);
        }
        EXPECT_LE(p.var.shape().rank(), 4);
      }
    }
  }
}

TEST(ModelTest, BatchItemsAreIndependent) {
  // Permuting the batch permutes the output: inference has no cross-sample
  // coupling.
  const SegmentationModel model(make_spec(EncoderKind::kMobileNet, DecoderKind::kUNet, 3, 64, 64));
  const Tensorf x = random_images(3, 64, 5);
  Tensorf swapped = x;
  const Index stride = 64 * 64 * 3;
  std::copy(x.data(), x.data() + stride, swapped.data() + 2 * stride);
  std::copy(x.data() + 2 * stride, x.data() + 3 * stride, swapped.data());
  const Tensorf a = model.forward(x), b = model.forward(swapped);
  const Index out = 64 * 64 * 3;
  EXPECT_TRUE((a.array().segment(0, out) == b.array().segment(2 * out, out)).all());
  EXPECT_TRUE((a.array().segment(out, out) == b.array().segment(out, out)).all());
}

Index trainable_count(const SegmentationModel& model) {
  Index n = 0;
  for (const auto& p : model.parameters().entries()) {
    if (p.role == ParamRole::kTrainable) n += p.var.value().size();
  }
  return n;
}

TEST(ModelTest, PlainSegNetParameterCountMatchesFormula) {
  const int k = 12;
  // conv3x3 (no bias) + BN gamma/beta per block.
  auto block = [](Index in, Index out) { return 9 * in * out + 2 * out; };
  Index expected = 0;
  Index in = 3;
  for (Index c : {32, 64, 128, 256, 512}) {
    expected += block(in, c) + block(c, c);
    in = c;
  }
  for (Index c : kDecoderWidths) {
    expected += block(in, c);
    in = c;
  }
  expected += in * k + k;  // 1x1 classifier with bias
  const SegmentationModel model(make_spec(EncoderKind::kPlain, DecoderKind::kSegNet, k, 96, 96));
  EXPECT_EQ(trainable_count(model), expected);
}

TEST(ModelTest, EncodersDifferInSize) {
  std::set<Index> counts;
  for (EncoderKind e : kAllEncoders) {
    counts.insert(count_parameters(SegmentationModel(make_spec(e, DecoderKind::kFcn32, 12, 96, 96))));
  }
  EXPECT_EQ(counts.size(), 4u);
}

TEST(ModelTest, CanonicalNamesAreUniqueAndWellFormed) {
  for (EncoderKind e : kAllEncoders) {
    for (DecoderKind d : kAllDecoders) {
      const SegmentationModel model(make_spec(e, d, 3, 96, 96));
      std::set<std::string> names;
      for (const auto& p : model.parameters().entries()) {
        EXPECT_TRUE(is_canonical_name(p.name)) << p.name;
        EXPECT_TRUE(names.insert(p.name).second) << p.name;
      }
      EXPECT_NE(model.parameters().find("head.classifier.conv.kernel"), nullptr);
    }
  }
}

TEST(ModelTest, SameSeedSameWeights) {
  const auto spec = make_spec(EncoderKind::kPlain, DecoderKind::kUNet, 3, 64, 64);
  const SegmentationModel a(spec, 7), b(spec, 7), c(spec, 8);
  const auto& pa = a.parameters().entries()[0].var.value();
  EXPECT_TRUE((pa.array() == b.parameters().entries()[0].var.value().array()).all());
  EXPECT_FALSE((pa.array() == c.parameters().entries()[0].var.value().array()).all());
}

TEST(ModelSpecTest, ValidationRejectsBadSpecs) {
  EXPECT_THROW(assemble_model(make_spec(EncoderKind::kPlain, DecoderKind::kSegNet, 1, 96, 96)), SpecError);
  EXPECT_THROW(assemble_model(make_spec(EncoderKind::kPlain, DecoderKind::kSegNet, 3, 100, 96)), SpecError);
  // 64 / 8 = 8 is not divisible by the 3- and 6-bin grids.
  EXPECT_THROW(assemble_model(make_spec(EncoderKind::kPlain, DecoderKind::kPspNet, 3, 64, 96)), SpecError);
  auto spec = make_spec(EncoderKind::kPlain, DecoderKind::kSegNet, 3, 96, 96);
  spec.native_stride = 8;
  EXPECT_THROW(validate(spec), SpecError);
  EXPECT_THROW(parse_encoder_kind("alexnet"), SpecError);
}

TEST(ModelSpecTest, JsonRoundTripAndDifferences) {
  auto spec = make_spec(EncoderKind::kResNet50, DecoderKind::kPspNet, 12, 96, 192);
  spec.pretrained_source = "ade20k";
  const ModelSpec back = nlohmann::json(spec).get<ModelSpec>();
  EXPECT_EQ(back, spec);
  auto other = spec;
  other.n_classes = 8;
  other.pretrained_source.reset();
  EXPECT_EQ(spec_differences(spec, other), std::vector<std::string>{"n_classes"});
}

TEST(ModelSpecTest, DisplayNamesFollowTableRows) {
  EXPECT_EQ(display_name(make_spec(EncoderKind::kMobileNet, DecoderKind::kUNet, 12, 96, 96)), "MobileNet UNet");
  EXPECT_EQ(display_name(make_spec(EncoderKind::kPlain, DecoderKind::kSegNet, 12, 96, 96)), "SegNet");
  EXPECT_EQ(display_name(make_spec(EncoderKind::kResNet50, DecoderKind::kPspNet, 12, 96, 96)), "ResNet50 PSPNet");
  auto psp = make_spec(EncoderKind::kResNet50, DecoderKind::kPspNet, 12, 96, 96);
  psp.pretrained_source = "ade20k";
  EXPECT_EQ(display_name(psp), "PSP Pretrained");
}

}  // namespace
}  // namespace segkit

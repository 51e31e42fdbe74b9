#include "segkit/architectures.hpp"
#include "segkit/ops.hpp"

namespace segkit {

namespace {

std::string level_name(int level) { return "encoder.f" + std::to_string(level); }

// Five blocks of (3x3 conv -> BN -> ReLU) x 2 followed by 2x2 max pooling.
class PlainEncoder final : public Encoder {
 public:
  static constexpr std::array<Index, 5> kChannels = {32, 64, 128, 256, 512};

  PlainEncoder(ParameterStore& store, Initializer& init) {
    Index in = 3;
    for (size_t b = 0; b < 5; ++b) {
      const std::string block = "encoder.block" + std::to_string(b + 1);
      blocks_[b][0] = ConvBnAct(store, init, block, "conv1", "bn1", in, kChannels[b], {}, Activation::kRelu);
      blocks_[b][1] =
          ConvBnAct(store, init, block, "conv2", "bn2", kChannels[b], kChannels[b], {}, Activation::kRelu);
      in = kChannels[b];
    }
  }

  FeaturePyramid operator()(const Var& images, const ForwardContext& ctx) const override {
    FeaturePyramid pyramid;
    Var x = images;
    for (size_t b = 0; b < 5; ++b) {
      x = blocks_[b][1](blocks_[b][0](x, ctx), ctx);
      x = max_pool2d(x, 2, 2, 0);
      pyramid.levels[b] = x;
      ctx.record(level_name(static_cast<int>(b) + 1), x);
    }
    return pyramid;
  }

  std::array<Index, 5> channels() const override { return kChannels; }

 private:
  std::array<std::array<ConvBnAct, 2>, 5> blocks_;
};

// VGG-16 convolutional stack: 2, 2, 3, 3, 3 convs per block, ReLU, no
// batch norm, max pool after each block.
class VggEncoder final : public Encoder {
 public:
  static constexpr std::array<Index, 5> kChannels = {64, 128, 256, 512, 512};
  static constexpr std::array<int, 5> kDepth = {2, 2, 3, 3, 3};

  VggEncoder(ParameterStore& store, Initializer& init) {
    Index in = 3;
    for (size_t b = 0; b < 5; ++b) {
      const std::string block = "encoder.block" + std::to_string(b + 1);
      for (int i = 0; i < kDepth[b]; ++i) {
        blocks_[b].emplace_back(store, init, block + ".conv" + std::to_string(i + 1), in,
                                kChannels[b], Conv2d::Options{});
        in = kChannels[b];
      }
    }
  }

  FeaturePyramid operator()(const Var& images, const ForwardContext& ctx) const override {
    FeaturePyramid pyramid;
    Var x = images;
    for (size_t b = 0; b < 5; ++b) {
      for (const auto& conv : blocks_[b]) x = relu(conv(x));
      x = max_pool2d(x, 2, 2, 0);
      pyramid.levels[b] = x;
      ctx.record(level_name(static_cast<int>(b) + 1), x);
    }
    return pyramid;
  }

  std::array<Index, 5> channels() const override { return kChannels; }

 private:
  std::array<std::vector<Conv2d>, 5> blocks_;
};

// ResNet-50 bottleneck: 1x1 reduce, 3x3 (strided), 1x1 expand, with a
// projection shortcut on the first block of each stage.
class Bottleneck {
 public:
  Bottleneck(ParameterStore& store, Initializer& init, const std::string& block, Index in,
             Index width, int stride, bool project) {
    const Index out = width * 4;
    reduce_ = ConvBnAct(store, init, block, "conv1", "bn1", in, width, {.kernel = 1}, Activation::kRelu);
    spatial_ = ConvBnAct(store, init, block, "conv2", "bn2", width, width,
                         {.kernel = 3, .stride = stride}, Activation::kRelu);
    expand_ = ConvBnAct(store, init, block, "conv3", "bn3", width, out, {.kernel = 1}, Activation::kNone);
    if (project) {
      shortcut_ = ConvBnAct(store, init, block, "proj", "projbn", in, out,
                            {.kernel = 1, .stride = stride, .padding = 0}, Activation::kNone);
      has_projection_ = true;
    }
  }

  Var operator()(const Var& x, const ForwardContext& ctx) const {
    Var y = expand_(spatial_(reduce_(x, ctx), ctx), ctx);
    Var skip = has_projection_ ? shortcut_(x, ctx) : x;
    return relu(add(y, skip));
  }

 private:
  ConvBnAct reduce_, spatial_, expand_, shortcut_;
  bool has_projection_ = false;
};

class ResNet50Encoder final : public Encoder {
 public:
  static constexpr std::array<Index, 5> kChannels = {64, 256, 512, 1024, 2048};
  static constexpr std::array<int, 4> kBlocks = {3, 4, 6, 3};

  ResNet50Encoder(ParameterStore& store, Initializer& init) {
    stem_ = ConvBnAct(store, init, "encoder.stem", "conv1", "bn1", 3, 64, {.kernel = 7, .stride = 2},
                      Activation::kRelu);
    Index in = 64;
    for (size_t s = 0; s < 4; ++s) {
      const Index width = Index{64} << s;
      for (int b = 0; b < kBlocks[s]; ++b) {
        const std::string block =
            "encoder.res" + std::to_string(s + 2) + static_cast<char>('a' + b);
        const int stride = (b == 0 && s > 0) ? 2 : 1;
        stages_[s].emplace_back(store, init, block, in, width, stride, b == 0);
        in = width * 4;
      }
    }
  }

  FeaturePyramid operator()(const Var& images, const ForwardContext& ctx) const override {
    FeaturePyramid pyramid;
    Var x = stem_(images, ctx);
    pyramid.levels[0] = x;
    ctx.record(level_name(1), x);
    x = max_pool2d(x, 3, 2, 1);
    for (size_t s = 0; s < 4; ++s) {
      for (const auto& block : stages_[s]) x = block(x, ctx);
      pyramid.levels[s + 1] = x;
      ctx.record(level_name(static_cast<int>(s) + 2), x);
    }
    return pyramid;
  }

  std::array<Index, 5> channels() const override { return kChannels; }

 private:
  ConvBnAct stem_;
  std::array<std::vector<Bottleneck>, 4> stages_;
};

// MobileNet (v1, width 1.0): strided 3x3 stem, then 13 depthwise-separable
// blocks (3x3 depthwise -> BN -> ReLU6 -> 1x1 pointwise -> BN -> ReLU6).
class MobileNetEncoder final : public Encoder {
 public:
  static constexpr std::array<Index, 5> kChannels = {64, 128, 256, 512, 1024};

  struct BlockDef {
    Index out;
    int stride;
    int tap;  // pyramid level emitted after this block, 0 for none
  };
  static constexpr std::array<BlockDef, 13> kBlocks = {{{64, 1, 1},
                                                        {128, 2, 0},
                                                        {128, 1, 2},
                                                        {256, 2, 0},
                                                        {256, 1, 3},
                                                        {512, 2, 0},
                                                        {512, 1, 0},
                                                        {512, 1, 0},
                                                        {512, 1, 0},
                                                        {512, 1, 0},
                                                        {512, 1, 4},
                                                        {1024, 2, 0},
                                                        {1024, 1, 5}}};

  MobileNetEncoder(ParameterStore& store, Initializer& init) {
    stem_ = ConvBnAct(store, init, "encoder.stem", "conv1", "bn1", 3, 32, {.kernel = 3, .stride = 2},
                      Activation::kRelu6);
    Index in = 32;
    for (size_t i = 0; i < kBlocks.size(); ++i) {
      const std::string block = "encoder.dw" + std::to_string(i + 1);
      depthwise_[i] = ConvBnAct(store, init, block, "depthwise", "bn1", in, in,
                                {.kernel = 3, .stride = kBlocks[i].stride, .depthwise = true},
                                Activation::kRelu6);
      pointwise_[i] = ConvBnAct(store, init, block, "pointwise", "bn2", in, kBlocks[i].out,
                                {.kernel = 1}, Activation::kRelu6);
      in = kBlocks[i].out;
    }
  }

  FeaturePyramid operator()(const Var& images, const ForwardContext& ctx) const override {
    FeaturePyramid pyramid;
    Var x = stem_(images, ctx);
    for (size_t i = 0; i < kBlocks.size(); ++i) {
      x = pointwise_[i](depthwise_[i](x, ctx), ctx);
      if (const int tap = kBlocks[i].tap) {
        pyramid.levels[static_cast<size_t>(tap - 1)] = x;
        ctx.record(level_name(tap), x);
      }
    }
    return pyramid;
  }

  std::array<Index, 5> channels() const override { return kChannels; }

 private:
  ConvBnAct stem_;
  std::array<ConvBnAct, 13> depthwise_, pointwise_;
};

}  // namespace

std::unique_ptr<Encoder> build_encoder(EncoderKind kind, Index input_height, Index input_width,
                                       ParameterStore& store, Initializer& init) {
  if (input_height <= 0 || input_width <= 0 || input_height % kMaxStride != 0 ||
      input_width % kMaxStride != 0) {
    throw SpecError("encoder input " + std::to_string(input_height) + "x" +
                    std::to_string(input_width) + " is not divisible by " + std::to_string(kMaxStride));
  }
  switch (kind) {
    case EncoderKind::kPlain: return std::make_unique<PlainEncoder>(store, init);
    case EncoderKind::kVgg: return std::make_unique<VggEncoder>(store, init);
    case EncoderKind::kResNet50: return std::make_unique<ResNet50Encoder>(store, init);
    case EncoderKind::kMobileNet: return std::make_unique<MobileNetEncoder>(store, init);
  }
  throw SpecError("unknown encoder kind");
}

}  // namespace segkit

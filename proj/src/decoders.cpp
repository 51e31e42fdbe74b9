#include "segkit/architectures.hpp"
#include "segkit/ops.hpp"

namespace segkit {

namespace {

Conv2d classifier(ParameterStore& store, Initializer& init, Index in, int n_classes) {
  return Conv2d(store, init, "head.classifier.conv", in, n_classes, {.kernel = 1});
}

// Plain upsampling path from f5: (2x nearest upsample -> 3x3 conv -> BN ->
// ReLU) five times, no encoder skips.
class SegNetDecoder final : public Decoder {
 public:
  SegNetDecoder(const std::array<Index, 5>& channels, int n_classes, ParameterStore& store,
                Initializer& init) {
    Index in = channels[4];
    for (size_t i = 0; i < steps_.size(); ++i) {
      steps_[i] = ConvBnAct(store, init, "decoder.up" + std::to_string(i + 1), "conv1", "bn1", in,
                            kDecoderWidths[i], {}, Activation::kRelu);
      in = kDecoderWidths[i];
    }
    head_ = classifier(store, init, in, n_classes);
  }

  Var operator()(const FeaturePyramid& pyramid, const ForwardContext& ctx) const override {
    Var x = pyramid.at(5);
    for (size_t i = 0; i < steps_.size(); ++i) {
      x = steps_[i](upsample_nearest(x, 2), ctx);
      ctx.record("decoder.up" + std::to_string(i + 1), x);
    }
    return head_(x);
  }

 private:
  std::array<ConvBnAct, 5> steps_;
  Conv2d head_;
};

// Each up-step: 2x upsample, concatenate the same-stride encoder level
// along channels, two conv blocks. The last step reaches stride 1 where the
// pyramid has no level, so it runs without a skip.
class UNetDecoder final : public Decoder {
 public:
  UNetDecoder(const std::array<Index, 5>& channels, int n_classes, ParameterStore& store,
              Initializer& init) {
    Index in = channels[4];
    for (size_t i = 0; i < 5; ++i) {
      const std::string block = "decoder.up" + std::to_string(i + 1);
      const Index skip = i < 4 ? channels[3 - i] : 0;
      first_[i] = ConvBnAct(store, init, block, "conv1", "bn1", in + skip, kDecoderWidths[i], {},
                            Activation::kRelu);
      second_[i] = ConvBnAct(store, init, block, "conv2", "bn2", kDecoderWidths[i],
                             kDecoderWidths[i], {}, Activation::kRelu);
      in = kDecoderWidths[i];
    }
    head_ = classifier(store, init, in, n_classes);
  }

  Var operator()(const FeaturePyramid& pyramid, const ForwardContext& ctx) const override {
    Var x = pyramid.at(5);
    for (size_t i = 0; i < 5; ++i) {
      x = upsample_nearest(x, 2);
      const std::string step = "decoder.up" + std::to_string(i + 1);
      if (i < 4) {
        const Var& skip = pyramid.at(4 - static_cast<int>(i));
        ctx.record(step + ".upsampled", x);
        ctx.record(step + ".skip", skip);
        const Var parts[] = {x, skip};
        x = concat_channels(parts);
      }
      x = second_[i](first_[i](x, ctx), ctx);
      ctx.record(step, x);
    }
    return head_(x);
  }

 private:
  std::array<ConvBnAct, 5> first_, second_;
  Conv2d head_;
};

// 1x1 class scores on f5, one 32x nearest upsample.
class Fcn32Decoder final : public Decoder {
 public:
  Fcn32Decoder(const std::array<Index, 5>& channels, int n_classes, ParameterStore& store,
               Initializer& init)
      : score5_(classifier(store, init, channels[4], n_classes)) {}

  Var operator()(const FeaturePyramid& pyramid, const ForwardContext& ctx) const override {
    Var s = score5_(pyramid.at(5));
    ctx.record("decoder.score5", s);
    return upsample_nearest(s, 32);
  }

 private:
  Conv2d score5_;
};

// 1x1 class scores on f5, f4, f3 fused by 2x upsample + addition, then a
// final 8x upsample. Nearest upsampling composes exactly, so zeroed f4/f3
// score paths reproduce the 32x path bit for bit.
class Fcn8Decoder final : public Decoder {
 public:
  Fcn8Decoder(const std::array<Index, 5>& channels, int n_classes, ParameterStore& store,
              Initializer& init)
      : score5_(classifier(store, init, channels[4], n_classes)),
        score4_(store, init, "decoder.score4.conv", channels[3], n_classes, {.kernel = 1}),
        score3_(store, init, "decoder.score3.conv", channels[2], n_classes, {.kernel = 1}) {}

  Var operator()(const FeaturePyramid& pyramid, const ForwardContext& ctx) const override {
    Var s = score5_(pyramid.at(5));
    s = add(upsample_nearest(s, 2), score4_(pyramid.at(4)));
    ctx.record("decoder.fuse16", s);
    s = add(upsample_nearest(s, 2), score3_(pyramid.at(3)));
    ctx.record("decoder.fuse8", s);
    return upsample_nearest(s, 8);
  }

 private:
  Conv2d score5_, score4_, score3_;
};

// Pyramid pooling on the stride-8 level: average-pool to each bin grid,
// 1x1 conv block, bilinear upsample back, concatenate with the input,
// 3x3 conv block, classifier. Output stays at stride 8.
class PspDecoder final : public Decoder {
 public:
  PspDecoder(const std::array<Index, 5>& channels, int n_classes, ParameterStore& store,
             Initializer& init) {
    const Index in = channels[2];
    const Index branch = in / 4;
    for (size_t i = 0; i < branches_.size(); ++i) {
      branches_[i] = ConvBnAct(store, init, "decoder.pool" + std::to_string(kPyramidBins[i]), "conv",
                               "bn", in, branch, {.kernel = 1}, Activation::kRelu);
    }
    fuse_ = ConvBnAct(store, init, "decoder.fuse", "conv", "bn",
                      in + branch * static_cast<Index>(branches_.size()), in, {}, Activation::kRelu);
    head_ = classifier(store, init, in, n_classes);
  }

  Var operator()(const FeaturePyramid& pyramid, const ForwardContext& ctx) const override {
    const Var& x = pyramid.at(3);
    ctx.record("decoder.psp.input", x);
    std::vector<Var> parts{x};
    for (size_t i = 0; i < branches_.size(); ++i) {
      const int bins = kPyramidBins[i];
      Var pooled = adaptive_avg_pool(x, bins);
      ctx.record("decoder.psp.pool" + std::to_string(bins), pooled);
      parts.push_back(resize_bilinear(branches_[i](pooled, ctx), x.value().height(), x.value().width()));
    }
    Var y = fuse_(concat_channels(parts), ctx);
    ctx.record("decoder.psp.fused", y);
    return head_(y);
  }

 private:
  std::array<ConvBnAct, 4> branches_;
  ConvBnAct fuse_;
  Conv2d head_;
};

}  // namespace

std::unique_ptr<Decoder> build_decoder(DecoderKind kind, const std::array<Index, 5>& channels,
                                       int n_classes, ParameterStore& store, Initializer& init) {
  switch (kind) {
    case DecoderKind::kSegNet: return std::make_unique<SegNetDecoder>(channels, n_classes, store, init);
    case DecoderKind::kUNet: return std::make_unique<UNetDecoder>(channels, n_classes, store, init);
    case DecoderKind::kFcn32: return std::make_unique<Fcn32Decoder>(channels, n_classes, store, init);
    case DecoderKind::kFcn8: return std::make_unique<Fcn8Decoder>(channels, n_classes, store, init);
    case DecoderKind::kPspNet: return std::make_unique<PspDecoder>(channels, n_classes, store, init);
  }
  throw SpecError("unknown decoder kind");
}

}  // namespace segkit

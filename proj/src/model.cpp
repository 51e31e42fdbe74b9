#include "segkit/architectures.hpp"
#include "segkit/ops.hpp"

namespace segkit {

SegmentationModel::SegmentationModel(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
  validate(spec_);
  Initializer init(seed);
  encoder_ = build_encoder(spec_.encoder, spec_.input_height, spec_.input_width, store_, init);
  decoder_ = build_decoder(spec_.decoder, encoder_->channels(), spec_.n_classes, store_, init);
}

ModelOutput SegmentationModel::run(const Var& images, const ForwardContext& ctx) const {
  const Shape expected{images.value().rank() == 4 ? images.value().batch() : 0, spec_.input_height,
                       spec_.input_width, 3};
  require_shape(images.shape(), expected, "model input");
  if (expected[0] < 1) throw ShapeError("model input batch is empty");

  const FeaturePyramid pyramid = (*encoder_)(images, ctx);
  ModelOutput out;
  out.scores = (*decoder_)(pyramid, ctx);
  ctx.record("scores", out.scores);
  out.probs = softmax(out.scores);
  if (spec_.native_stride > 1) {
    out.probs = resize_bilinear(out.probs, spec_.input_height, spec_.input_width);
  }
  ctx.record("probs", out.probs);
  return out;
}

Tensorf SegmentationModel::forward(const Tensorf& images) const {
  NoGradGuard no_grad;
  ForwardContext ctx;
  return run(Var(images), ctx).probs.value();
}

ModelOutput SegmentationModel::forward_graph(const Var& images, const ForwardContext& ctx) {
  return run(images, ctx);
}

SegmentationModel assemble_model(const ModelSpec& spec, std::uint64_t seed) {
  return SegmentationModel(spec, seed);
}

Tensorf forward(const SegmentationModel& model, const Tensorf& images) {
  return model.forward(images);
}

Index count_parameters(const SegmentationModel& model) {
  return model.parameters().scalar_count();
}

}  // namespace segkit

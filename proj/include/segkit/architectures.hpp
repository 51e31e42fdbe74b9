#pragma once

#include <array>
#include <memory>
#include <span>

#include "segkit/layers.hpp"
#include "segkit/model_spec.hpp"

namespace segkit {

// Encoder activations f1..f5 at strides 2, 4, 8, 16, 32.
struct FeaturePyramid {
  std::array<Var, 5> levels;

  // level in [1, 5]
  const Var& at(int level) const { return levels[static_cast<size_t>(level - 1)]; }
};

class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual FeaturePyramid operator()(const Var& images, const ForwardContext& ctx) const = 0;
  // Channel count of f1..f5.
  virtual std::array<Index, 5> channels() const = 0;
};

// Maps the pyramid to class scores at the decoder's native stride.
class Decoder {
 public:
  virtual ~Decoder() = default;
  virtual Var operator()(const FeaturePyramid& pyramid, const ForwardContext& ctx) const = 0;
};

// Registers encoder parameters under `encoder.*`. Throws SpecError unless
// both dims are positive multiples of 32.
std::unique_ptr<Encoder> build_encoder(EncoderKind kind, Index input_height, Index input_width,
                                       ParameterStore& store, Initializer& init);

// Registers decoder parameters under `decoder.*` and the final classifier
// under `head.classifier.conv.*`.
std::unique_ptr<Decoder> build_decoder(DecoderKind kind, const std::array<Index, 5>& channels,
                                       int n_classes, ParameterStore& store, Initializer& init);

// Decoder widths per up-step for segnet/unet, from stride 16 down to 1.
inline constexpr std::array<Index, 5> kDecoderWidths = {256, 128, 64, 32, 32};

struct ModelOutput {
  Var scores;  // class scores at native stride
  Var probs;   // class distributions at input resolution
};

class SegmentationModel {
 public:
  explicit SegmentationModel(const ModelSpec& spec, std::uint64_t seed = 0);

  SegmentationModel(SegmentationModel&&) noexcept = default;
  SegmentationModel& operator=(SegmentationModel&&) noexcept = default;
  SegmentationModel(const SegmentationModel&) = delete;
  SegmentationModel& operator=(const SegmentationModel&) = delete;

  const ModelSpec& spec() const { return spec_; }
  ModelSpec& mutable_spec() { return spec_; }
  const ParameterStore& parameters() const { return store_; }
  ParameterStore& parameters() { return store_; }

  // Inference: B x H x W x 3 images to B x H x W x K distributions using
  // stored batch-norm statistics. Pure; safe to call concurrently.
  Tensorf forward(const Tensorf& images) const;

  // Differentiable forward. In training mode batch norm uses batch
  // statistics and updates its running averages.
  ModelOutput forward_graph(const Var& images, const ForwardContext& ctx);

 private:
  ModelOutput run(const Var& images, const ForwardContext& ctx) const;

  ModelSpec spec_;
  ParameterStore store_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<Decoder> decoder_;
};

// Validates `spec` and builds a freshly initialized model.
SegmentationModel assemble_model(const ModelSpec& spec, std::uint64_t seed = 0);

Tensorf forward(const SegmentationModel& model, const Tensorf& images);

Index count_parameters(const SegmentationModel& model);

}  // namespace segkit

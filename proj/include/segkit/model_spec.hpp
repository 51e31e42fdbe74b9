#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace segkit {

enum class EncoderKind { kPlain, kVgg, kResNet50, kMobileNet };
enum class DecoderKind { kSegNet, kUNet, kFcn32, kFcn8, kPspNet };

inline constexpr EncoderKind kAllEncoders[] = {EncoderKind::kPlain, EncoderKind::kVgg,
                                               EncoderKind::kResNet50, EncoderKind::kMobileNet};
inline constexpr DecoderKind kAllDecoders[] = {DecoderKind::kSegNet, DecoderKind::kUNet,
                                               DecoderKind::kFcn32, DecoderKind::kFcn8,
                                               DecoderKind::kPspNet};

// Deepest encoder stride; input dims must be multiples of it.
inline constexpr int kMaxStride = 32;
// Stride of the feature map the pyramid pooling head works on.
inline constexpr int kPyramidPoolingStride = 8;
inline constexpr int kPyramidBins[] = {1, 2, 3, 6};

std::string_view to_string(EncoderKind kind);
std::string_view to_string(DecoderKind kind);
EncoderKind parse_encoder_kind(std::string_view name);
DecoderKind parse_decoder_kind(std::string_view name);

// Output stride a decoder produces before the final resize to input dims.
int native_stride_of(DecoderKind kind);

struct ModelSpec {
  EncoderKind encoder = EncoderKind::kPlain;
  DecoderKind decoder = DecoderKind::kSegNet;
  int n_classes = 2;
  int input_height = 96;
  int input_width = 96;
  int native_stride = 1;
  std::optional<std::string> pretrained_source;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Spec with native_stride filled in from the decoder.
ModelSpec make_spec(EncoderKind encoder, DecoderKind decoder, int n_classes, int input_height,
                    int input_width);

// Every encoder exposes all five pyramid levels, so all pairings are
// currently compatible; kept as a single point of truth for assembly.
bool is_compatible(EncoderKind encoder, DecoderKind decoder);

// Throws SpecError describing the first violated invariant.
void validate(const ModelSpec& spec);

// Names of fields that differ, ignoring pretrained_source.
std::vector<std::string> spec_differences(const ModelSpec& a, const ModelSpec& b);

// Row label in the style of the benchmark tables, e.g. "MobileNet UNet",
// "SegNet", "PSP Pretrained".
std::string display_name(const ModelSpec& spec);

void to_json(nlohmann::json& j, const ModelSpec& spec);
void from_json(const nlohmann::json& j, ModelSpec& spec);

}  // namespace segkit

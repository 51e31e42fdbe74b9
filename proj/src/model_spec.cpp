#include "segkit/model_spec.hpp"

#include "segkit/error.hpp"

namespace segkit {

std::string_view to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::kPlain: return "plain";
    case EncoderKind::kVgg: return "vgg";
    case EncoderKind::kResNet50: return "resnet50";
    case EncoderKind::kMobileNet: return "mobilenet";
  }
  return "?";
}

std::string_view to_string(DecoderKind kind) {
  switch (kind) {
    case DecoderKind::kSegNet: return "segnet";
    case DecoderKind::kUNet: return "unet";
    case DecoderKind::kFcn32: return "fcn32";
    case DecoderKind::kFcn8: return "fcn8";
    case DecoderKind::kPspNet: return "pspnet";
  }
  return "?";
}

EncoderKind parse_encoder_kind(std::string_view name) {
  for (auto kind : kAllEncoders) {
    if (to_string(kind) == name) return kind;
  }
  throw SpecError("unknown encoder kind '" + std::string(name) +
                  "' (expected plain, vgg, resnet50, mobilenet)");
}

DecoderKind parse_decoder_kind(std::string_view name) {
  for (auto kind : kAllDecoders) {
    if (to_string(kind) == name) return kind;
  }
  throw SpecError("unknown decoder kind '" + std::string(name) +
                  "' (expected segnet, unet, fcn32, fcn8, pspnet)");
}

int native_stride_of(DecoderKind kind) {
  return kind == DecoderKind::kPspNet ? kPyramidPoolingStride : 1;
}

ModelSpec make_spec(EncoderKind encoder, DecoderKind decoder, int n_classes, int input_height,
                    int input_width) {
  ModelSpec spec;
  spec.encoder = encoder;
  spec.decoder = decoder;
  spec.n_classes = n_classes;
  spec.input_height = input_height;
  spec.input_width = input_width;
  spec.native_stride = native_stride_of(decoder);
  return spec;
}

bool is_compatible(EncoderKind, DecoderKind) { return true; }

void validate(const ModelSpec& spec) {
  if (spec.n_classes < 2) {
    throw SpecError("n_classes must be >= 2, got " + std::to_string(spec.n_classes));
  }
  if (spec.n_classes > 256) {
    throw SpecError("n_classes must be <= 256 (8-bit annotations), got " +
                    std::to_string(spec.n_classes));
  }
  if (spec.input_height <= 0 || spec.input_width <= 0 || spec.input_height % kMaxStride != 0 ||
      spec.input_width % kMaxStride != 0) {
    throw SpecError("input dims " + std::to_string(spec.input_height) + "x" +
                    std::to_string(spec.input_width) + " must be positive multiples of " +
                    std::to_string(kMaxStride));
  }
  if (!is_compatible(spec.encoder, spec.decoder)) {
    throw SpecError("decoder " + std::string(to_string(spec.decoder)) +
                    " cannot be paired with encoder " + std::string(to_string(spec.encoder)));
  }
  if (spec.native_stride != native_stride_of(spec.decoder)) {
    throw SpecError("native_stride " + std::to_string(spec.native_stride) + " does not match decoder " +
                    std::string(to_string(spec.decoder)) + " (expected " +
                    std::to_string(native_stride_of(spec.decoder)) + ")");
  }
  if (spec.decoder == DecoderKind::kPspNet) {
    for (int dim : {spec.input_height, spec.input_width}) {
      const int pooled = dim / kPyramidPoolingStride;
      for (int bins : kPyramidBins) {
        if (pooled % bins != 0) {
          throw SpecError("pspnet needs input dims / 8 divisible by bins {1,2,3,6}; " +
                          std::to_string(dim) + " / 8 = " + std::to_string(pooled) +
                          " is not divisible by " + std::to_string(bins));
        }
      }
    }
  }
}

std::vector<std::string> spec_differences(const ModelSpec& a, const ModelSpec& b) {
  std::vector<std::string> diff;
  if (a.encoder != b.encoder) diff.emplace_back("encoder");
  if (a.decoder != b.decoder) diff.emplace_back("decoder");
  if (a.n_classes != b.n_classes) diff.emplace_back("n_classes");
  if (a.input_height != b.input_height) diff.emplace_back("input_height");
  if (a.input_width != b.input_width) diff.emplace_back("input_width");
  if (a.native_stride != b.native_stride) diff.emplace_back("native_stride");
  return diff;
}

std::string display_name(const ModelSpec& spec) {
  if (spec.decoder == DecoderKind::kPspNet && spec.pretrained_source) return "PSP Pretrained";
  std::string decoder;
  switch (spec.decoder) {
    case DecoderKind::kSegNet: decoder = "SegNet"; break;
    case DecoderKind::kUNet: decoder = "UNet"; break;
    case DecoderKind::kFcn32: decoder = "FCN-32"; break;
    case DecoderKind::kFcn8: decoder = "FCN-8"; break;
    case DecoderKind::kPspNet: decoder = "PSPNet"; break;
  }
  switch (spec.encoder) {
    case EncoderKind::kPlain: return decoder;
    case EncoderKind::kVgg: return "VGG " + decoder;
    case EncoderKind::kResNet50: return "ResNet50 " + decoder;
    case EncoderKind::kMobileNet: return "MobileNet " + decoder;
  }
  return decoder;
}

void to_json(nlohmann::json& j, const ModelSpec& spec) {
  j = nlohmann::json{{"encoder", std::string(to_string(spec.encoder))},
                     {"decoder", std::string(to_string(spec.decoder))},
                     {"n_classes", spec.n_classes},
                     {"input_height", spec.input_height},
                     {"input_width", spec.input_width},
                     {"native_stride", spec.native_stride}};
  j["pretrained_source"] = spec.pretrained_source ? nlohmann::json(*spec.pretrained_source)
                                                  : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, ModelSpec& spec) {
  try {
    spec.encoder = parse_encoder_kind(j.at("encoder").get<std::string>());
    spec.decoder = parse_decoder_kind(j.at("decoder").get<std::string>());
    spec.n_classes = j.at("n_classes").get<int>();
    spec.input_height = j.at("input_height").get<int>();
    spec.input_width = j.at("input_width").get<int>();
    spec.native_stride = j.contains("native_stride") ? j.at("native_stride").get<int>()
                                                     : native_stride_of(spec.decoder);
    spec.pretrained_source.reset();
    if (j.contains("pretrained_source") && !j.at("pretrained_source").is_null()) {
      spec.pretrained_source = j.at("pretrained_source").get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("malformed model spec: ") + e.what());
  }
}

}  // namespace segkit

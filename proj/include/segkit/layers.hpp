#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "segkit/autograd.hpp"

namespace segkit {

enum class ParamRole : std::uint8_t {
  kTrainable = 0,  // updated by the optimizer
  kBuffer = 1,     // batch-norm running statistics
};

struct Parameter {
  std::string name;
  Var var;
  ParamRole role = ParamRole::kTrainable;
};

// Named parameter arrays in creation order. Names follow the canonical
// `<stage>.<block>.<layer>.<kind>` scheme and are unique.
class ParameterStore {
 public:
  Var create(const std::string& name, Tensorf init, ParamRole role);

  const std::vector<Parameter>& entries() const { return entries_; }
  std::vector<Parameter>& entries() { return entries_; }
  const Parameter* find(const std::string& name) const;
  Parameter* find(const std::string& name);

  // Total scalar count across all arrays, buffers included.
  Index scalar_count() const;

 private:
  std::vector<Parameter> entries_;
  std::unordered_map<std::string, size_t> index_;
};

// True iff `name` has four non-empty dot-separated components.
bool is_canonical_name(const std::string& name);

// Deterministic parameter initialization. Uniform draws are built from raw
// 64-bit engine output, so values are identical across standard libraries.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1).
  double uniform();
  // U(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
  Tensorf fan_in_uniform(Shape shape, Index fan_in);

 private:
  std::mt19937_64 engine_;
};

// Per-forward settings shared by every layer.
struct ForwardContext {
  bool training = false;
  // Optional (name, shape) log of intermediate feature maps.
  std::vector<std::pair<std::string, Shape>>* trace = nullptr;

  void record(const std::string& name, const Var& v) const {
    if (trace) trace->emplace_back(name, v.shape());
  }
};

class Conv2d {
 public:
  struct Options {
    int kernel = 3;
    int stride = 1;
    // -1 selects "same" padding, kernel / 2.
    int padding = -1;
    bool bias = true;
    bool depthwise = false;
  };

  Conv2d() = default;
  // `prefix` is `<stage>.<block>.<layer>`.
  Conv2d(ParameterStore& store, Initializer& init, const std::string& prefix, Index in_channels,
         Index out_channels, Options options);

  Var operator()(const Var& x) const;

  Index out_channels() const { return out_channels_; }
  const Var& kernel() const { return kernel_; }
  const Var& bias() const { return bias_; }

 private:
  Var kernel_;
  Var bias_;
  Index out_channels_ = 0;
  int stride_ = 1;
  int padding_ = 0;
  bool depthwise_ = false;
};

// Batch normalization with bias-corrected running statistics: after t
// training batches the stored mean/variance are the exponentially weighted
// average of the t observed batch statistics with weights normalized to
// sum to one.
class BatchNorm {
 public:
  static constexpr float kMomentum = 0.99f;
  static constexpr float kEpsilon = 1e-3f;

  BatchNorm() = default;
  BatchNorm(ParameterStore& store, const std::string& prefix, Index channels);

  Var operator()(const Var& x, const ForwardContext& ctx) const;

 private:
  Var gamma_, beta_;
  Var running_mean_, running_var_, num_batches_;
};

enum class Activation { kNone, kRelu, kRelu6 };

Var activate(const Var& x, Activation act);

// conv (no bias) -> batch norm -> activation, registered as
// `<stage>.<block>.<conv_name>.*` and `<stage>.<block>.<bn_name>.*`.
class ConvBnAct {
 public:
  ConvBnAct() = default;
  ConvBnAct(ParameterStore& store, Initializer& init, const std::string& block_prefix,
            const std::string& conv_name, const std::string& bn_name, Index in_channels,
            Index out_channels, Conv2d::Options options, Activation act);

  Var operator()(const Var& x, const ForwardContext& ctx) const;
  Index out_channels() const { return conv_.out_channels(); }

 private:
  Conv2d conv_;
  BatchNorm bn_;
  Activation act_ = Activation::kRelu;
};

}  // namespace segkit

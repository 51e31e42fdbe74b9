#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "segkit/layers.hpp"

namespace segkit {

enum class OptimizerKind { kSgdMomentum, kAdaptiveMoment };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdaptiveMoment;
  double learning_rate = 1e-3;
  double momentum = 0.9;  // sgd_momentum
  double beta1 = 0.9;     // adaptive_moment
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

// First-order update over the trainable entries of a ParameterStore.
// Per-parameter slots are keyed by canonical name so they can be
// checkpointed and restored.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  // Applies one update from the accumulated gradients, then clears them.
  void step(ParameterStore& params);
  void zero_grad(ParameterStore& params) const;

  std::int64_t steps() const { return steps_; }
  const OptimizerConfig& config() const { return config_; }

  // Slot arrays as "<parameter>#<slot>" -> values.
  std::map<std::string, Tensorf> state() const;
  void load_state(std::int64_t steps, const std::map<std::string, Tensorf>& slots);

 private:
  OptimizerConfig config_;
  std::int64_t steps_ = 0;
  std::map<std::string, Tensorf> first_;   // momentum / first moment
  std::map<std::string, Tensorf> second_;  // second moment
};

}  // namespace segkit

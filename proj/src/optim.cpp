#include "segkit/optim.hpp"

#include <cmath>

namespace segkit {

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kSgdMomentum ? "sgd_momentum" : "adaptive_moment";
}

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "sgd_momentum") return OptimizerKind::kSgdMomentum;
  if (name == "adaptive_moment") return OptimizerKind::kAdaptiveMoment;
  throw ConfigError("unknown optimizer '" + std::string(name) +
                    "' (expected sgd_momentum or adaptive_moment)");
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) {
  if (!(config_.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (config_.momentum < 0.0 || config_.momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (config_.beta1 < 0.0 || config_.beta1 >= 1.0 || config_.beta2 < 0.0 || config_.beta2 >= 1.0) {
    throw ConfigError("beta1 and beta2 must be in [0, 1)");
  }
}

void Optimizer::zero_grad(ParameterStore& params) const {
  for (auto& p : params.entries()) {
    if (p.role == ParamRole::kTrainable) p.var.zero_grad();
  }
}

void Optimizer::step(ParameterStore& params) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const auto lr = static_cast<float>(config_.learning_rate);
  for (auto& p : params.entries()) {
    if (p.role != ParamRole::kTrainable || !p.var.has_grad()) continue;
    auto& value = p.var.mutable_value().array();
    const auto& grad = p.var.grad().array();
    auto& m = first_.try_emplace(p.name, p.var.value().shape()).first->second.array();

    if (config_.kind == OptimizerKind::kSgdMomentum) {
      m = static_cast<float>(config_.momentum) * m - lr * grad;
      value += m;
    } else {
      auto& v = second_.try_emplace(p.name, p.var.value().shape()).first->second.array();
      const auto b1 = static_cast<float>(config_.beta1);
      const auto b2 = static_cast<float>(config_.beta2);
      m = b1 * m + (1.0f - b1) * grad;
      v = b2 * v + (1.0f - b2) * grad.square();
      const auto step_size = static_cast<float>(config_.learning_rate *
                                                std::sqrt(1.0 - std::pow(config_.beta2, t)) /
                                                (1.0 - std::pow(config_.beta1, t)));
      value -= step_size * m / (v.sqrt() + static_cast<float>(config_.epsilon));
    }
  }
  zero_grad(params);
}

std::map<std::string, Tensorf> Optimizer::state() const {
  std::map<std::string, Tensorf> out;
  for (const auto& [name, t] : first_) out.emplace(name + "#m", t);
  for (const auto& [name, t] : second_) out.emplace(name + "#v", t);
  return out;
}

void Optimizer::load_state(std::int64_t steps, const std::map<std::string, Tensorf>& slots) {
  steps_ = steps;
  first_.clear();
  second_.clear();
  for (const auto& [key, t] : slots) {
    const auto hash = key.rfind('#');
    if (hash == std::string::npos) throw CheckpointError("malformed optimizer slot '" + key + "'");
    const std::string name = key.substr(0, hash);
    const std::string slot = key.substr(hash + 1);
    if (slot == "m") {
      first_[name] = t;
    } else if (slot == "v") {
      second_[name] = t;
    } else {
      throw CheckpointError("unknown optimizer slot '" + key + "'");
    }
  }
}

}  // namespace segkit

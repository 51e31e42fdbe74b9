#include "segkit/layers.hpp"

#include <cmath>

#include "segkit/ops.hpp"

namespace segkit {

Var ParameterStore::create(const std::string& name, Tensorf init, ParamRole role) {
  if (!is_canonical_name(name)) {
    throw SpecError("parameter name '" + name + "' is not <stage>.<block>.<layer>.<kind>");
  }
  if (index_.count(name)) throw SpecError("duplicate parameter name '" + name + "'");
  Var v(std::move(init), role == ParamRole::kTrainable);
  index_.emplace(name, entries_.size());
  entries_.push_back({name, v, role});
  return v;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

Index ParameterStore::scalar_count() const {
  Index total = 0;
  for (const auto& p : entries_) total += p.var.value().size();
  return total;
}

bool is_canonical_name(const std::string& name) {
  int parts = 1;
  size_t start = 0;
  for (size_t i = 0; i <= name.size(); ++i) {
    if (i == name.size() || name[i] == '.') {
      if (i == start) return false;
      if (i < name.size()) ++parts;
      start = i + 1;
    }
  }
  return parts == 4;
}

double Initializer::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

Tensorf Initializer::fan_in_uniform(Shape shape, Index fan_in) {
  Tensorf t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (Index i = 0; i < t.size(); ++i) {
    t[i] = static_cast<float>((2.0 * uniform() - 1.0) * limit);
  }
  return t;
}

Conv2d::Conv2d(ParameterStore& store, Initializer& init, const std::string& prefix,
               Index in_channels, Index out_channels, Options options)
    : out_channels_(options.depthwise ? in_channels : out_channels),
      stride_(options.stride),
      padding_(options.padding < 0 ? options.kernel / 2 : options.padding),
      depthwise_(options.depthwise) {
  const Index k = options.kernel;
  if (depthwise_) {
    kernel_ = store.create(prefix + ".kernel", init.fan_in_uniform({k, k, in_channels, 1}, k * k),
                           ParamRole::kTrainable);
  } else {
    kernel_ = store.create(prefix + ".kernel",
                           init.fan_in_uniform({k, k, in_channels, out_channels}, k * k * in_channels),
                           ParamRole::kTrainable);
  }
  if (options.bias) {
    bias_ = store.create(prefix + ".bias", Tensorf(Shape{out_channels_}), ParamRole::kTrainable);
  }
}

Var Conv2d::operator()(const Var& x) const {
  return depthwise_ ? depthwise_conv2d(x, kernel_, bias_, stride_, padding_)
                    : conv2d(x, kernel_, bias_, stride_, padding_);
}

BatchNorm::BatchNorm(ParameterStore& store, const std::string& prefix, Index channels) {
  gamma_ = store.create(prefix + ".gamma", Tensorf(Shape{channels}, 1.0f), ParamRole::kTrainable);
  beta_ = store.create(prefix + ".beta", Tensorf(Shape{channels}), ParamRole::kTrainable);
  running_mean_ = store.create(prefix + ".running_mean", Tensorf(Shape{channels}), ParamRole::kBuffer);
  running_var_ =
      store.create(prefix + ".running_var", Tensorf(Shape{channels}, 1.0f), ParamRole::kBuffer);
  num_batches_ = store.create(prefix + ".num_batches", Tensorf(Shape{1}), ParamRole::kBuffer);
}

Var BatchNorm::operator()(const Var& x, const ForwardContext& ctx) const {
  if (!ctx.training) {
    return batch_norm_infer(x, gamma_, beta_, running_mean_.value(), running_var_.value(), kEpsilon);
  }
  Tensorf mean, var;
  Var y = batch_norm_train(x, gamma_, beta_, kEpsilon, &mean, &var);

  // Weight of the newest batch is (1 - m) / (1 - m^t); the first batch
  // replaces the initial statistics outright.
  Var counter = num_batches_;
  const float t = counter.value()[0] + 1.0f;
  counter.mutable_value()[0] = t;
  const double decay = std::pow(static_cast<double>(kMomentum), static_cast<double>(t));
  const auto weight = static_cast<float>((1.0 - kMomentum) / (1.0 - decay));
  Var rm = running_mean_, rv = running_var_;
  rm.mutable_value().array() += weight * (mean.array() - rm.value().array());
  rv.mutable_value().array() += weight * (var.array() - rv.value().array());
  return y;
}

Var activate(const Var& x, Activation act) {
  switch (act) {
    case Activation::kRelu:
      return relu(x);
    case Activation::kRelu6:
      return relu6(x);
    case Activation::kNone:
      break;
  }
  return x;
}

ConvBnAct::ConvBnAct(ParameterStore& store, Initializer& init, const std::string& block_prefix,
                     const std::string& conv_name, const std::string& bn_name, Index in_channels,
                     Index out_channels, Conv2d::Options options, Activation act)
    : act_(act) {
  options.bias = false;
  conv_ = Conv2d(store, init, block_prefix + "." + conv_name, in_channels, out_channels, options);
  bn_ = BatchNorm(store, block_prefix + "." + bn_name, conv_.out_channels());
}

Var ConvBnAct::operator()(const Var& x, const ForwardContext& ctx) const {
  return activate(bn_(conv_(x), ctx), act_);
}

}  // namespace segkit

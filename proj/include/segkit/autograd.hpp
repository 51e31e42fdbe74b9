#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "segkit/tensor.hpp"

namespace segkit {

// One value in the reverse-mode tape. Interior nodes keep their inputs
// alive until backward() has run through them.
struct Node {
  Tensorf value;
  Tensorf grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  // Adds g into grad, allocating zeros on first use.
  void accumulate_grad(const Tensorf& g);
  Tensorf& grad_buffer();
};

// Handle to a tape node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensorf value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensorf& value() const { return node_->value; }
  Tensorf& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const Tensorf& grad() const { return node_->grad; }
  Tensorf& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Tensorf(); }

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

// Whether new ops record backward closures on the current thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Creates the result node of an op. When gradients are off or no input
// needs them, the node is a detached constant and `backward` is dropped.
Var make_result(Tensorf value, std::vector<Var> inputs,
                std::function<void(Node&)> backward);

// Runs reverse-mode accumulation from a scalar root (seed gradient 1).
// The visited part of the graph is released afterwards; leaf gradients stay.
void backward(const Var& root);

}  // namespace segkit

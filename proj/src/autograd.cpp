#include "segkit/autograd.hpp"

#include <unordered_set>

namespace segkit {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

void Node::accumulate_grad(const Tensorf& g) {
  if (grad.empty()) {
    grad = g;
    return;
  }
  if (grad.shape() != g.shape()) {
    throw ShapeError("gradient shape " + g.shape().str() +
                     " does not match value shape " + grad.shape().str());
  }
  grad.array() += g.array();
}

Tensorf& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensorf(value.shape());
  return grad;
}

Var::Var(Tensorf value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensorf value, std::vector<Var> inputs,
                std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (!g_grad_enabled) return Var(std::move(node));
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return Var(std::move(node));
  node->requires_grad = true;
  node->inputs.reserve(inputs.size());
  for (auto& in : inputs) node->inputs.push_back(in.node());
  node->backward_fn = std::move(backward);
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (!root.requires_grad()) return;
  if (root.value().size() != 1) {
    throw ShapeError("backward() needs a scalar root, got " + root.shape().str());
  }

  // Iterative post-order DFS gives a topological order without recursion
  // depth problems on deep encoders. The order owns its nodes: finished
  // nodes drop their inputs, which may be the only reference to a child
  // that has not run yet.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<std::shared_ptr<Node>, size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      std::shared_ptr<Node> child = node->inputs[next++];
      if (child && child->requires_grad && visited.insert(child.get()).second) {
        stack.emplace_back(std::move(child), 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  Node* top = root.node().get();
  top->grad = Tensorf(top->value.shape(), 1.0f);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = it->get();
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    // Interior nodes are done; drop closures and activations references.
    if (node->backward_fn) {
      node->backward_fn = nullptr;
      node->inputs.clear();
      if (node != top) node->grad = Tensorf();
    }
    if (node != top) it->reset();
  }
}

}  // namespace segkit

#include "mscc/autodiff.hpp"

#include <algorithm>
#include <unordered_set>

namespace mscc {

Var make_leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return node;
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = std::any_of(parents.begin(), parents.end(),
                                    [](const Var& p) { return p && p->requires_grad; });
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return node;
}

namespace {

// Post-order DFS without recursion; deep U-Nets overflow small stacks.
std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void backward(const Var& root, const Tensor& seed) {
  if (seed.shape() != root->value.shape()) {
    throw ShapeError("backward: seed shape " + shape_string(seed.shape()) +
                     " does not match root " + shape_string(root->value.shape()));
  }
  if (!root->requires_grad) return;
  auto order = topo_order(root.get());
  auto g = root->value.grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->value.has_grad()) node->backward_fn(*node);
  }
}

void backward(const Var& root) {
  if (root->value.size() != 1) {
    throw ShapeError("backward: implicit seed needs a scalar root, got " +
                     shape_string(root->value.shape()));
  }
  backward(root, Tensor(root->value.shape(), 1.0));
}

}  // namespace mscc

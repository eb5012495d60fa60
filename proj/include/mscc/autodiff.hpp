#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mscc/tensor.hpp"

namespace mscc {

struct Node;
using Var = std::shared_ptr<Node>;

/// One value in a reverse-mode graph. Leaves (inputs, parameters) have no
/// parents; interior nodes carry a closure that pushes `value.grad()` into
/// the gradients of their parents.
struct Node {
  Tensor value;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;
};

Var make_leaf(Tensor value, bool requires_grad = false);

/// Creates an interior node. When no parent requires a gradient the closure
/// and parent links are dropped, so inference graphs hold no history.
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

/// Reverse sweep from a scalar root (seed 1). Gradients accumulate into
/// every reachable node that requires them.
void backward(const Var& root);

/// Reverse sweep with an explicit output gradient of the root's shape.
void backward(const Var& root, const Tensor& seed);

}  // namespace mscc

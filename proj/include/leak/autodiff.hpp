#pragma once

#include "leak/tensor.hpp"

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

namespace leak::autodiff {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Per-backward-pass gradient accumulator keyed by node identity.
class GradStore {
public:
    // Existing slot, or a fresh zero tensor of the given shape.
    Tensor& slot(const Node* node, const std::vector<std::size_t>& shape);
    const Tensor* find(const Node* node) const;

private:
    std::unordered_map<const Node*, Tensor> grads_;
};

// Accumulates d(root)/d(parent) into the store, given d(root)/d(this node).
using BackwardFn = std::function<void(const Tensor& upstream, GradStore&)>;

// One vertex of the reverse-mode graph. Ops hold their parents via shared_ptr,
// so a root keeps its whole subgraph alive; graphs are built per step and
// dropped afterwards. Values are never mutated once a node exists.
struct Node {
    Tensor value;
    std::vector<NodePtr> parents;
    BackwardFn backprop;   // empty for leaves and constants
    const char* op = "leaf";
    bool requires_grad = false;
};

// Differentiable input (model weight, probe point, ...).
NodePtr leaf(Tensor value);
// Non-differentiable input (data, masks, selector matrices, ...).
NodePtr constant(Tensor value);

// Elementwise ops require exactly matching shapes — no broadcasting. Shape
// changes are always spelled out via reshape or an explicit ones-matmul.
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr div(const NodePtr& a, const NodePtr& b);
NodePtr matmul(const NodePtr& a, const NodePtr& b);
NodePtr relu(const NodePtr& x);
NodePtr softmax_rows(const NodePtr& z);
// log(max(x, floor)); below the floor the derivative is taken as 0.
NodePtr log(const NodePtr& x, double floor = 1e-12);
NodePtr abs(const NodePtr& x);
NodePtr sum(const NodePtr& x);    // -> scalar
NodePtr mean(const NodePtr& x);   // -> scalar
NodePtr scale(const NodePtr& x, double factor);
NodePtr reshape(const NodePtr& x, std::vector<std::size_t> shape);

// Result of a backward pass. Leaves that do not lie on a path to the root
// simply read back as zero.
class Gradients {
public:
    Tensor wrt(const NodePtr& node) const;
    bool touched(const NodePtr& node) const;

private:
    friend Gradients backward(const NodePtr& root);
    GradStore store_;
};

// Reverse sweep from a scalar root in deterministic topological order;
// identical graphs give bit-identical gradients.
Gradients backward(const NodePtr& root);

} // namespace leak::autodiff

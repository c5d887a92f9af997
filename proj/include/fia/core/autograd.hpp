#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "fia/core/tensor.hpp"

namespace fia {
namespace ag {

// Define-by-run reverse-mode autograd. Each op returns a Var holding the
// forward value plus a closure that pulls the node's grad into its parents.
// Graphs are small DAGs rebuilt every step; shared_ptr ownership keeps
// intermediate values alive until backward() runs.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily
    bool needs_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backprop;

    void ensure_grad() {
        if (grad.data.empty()) grad = Tensor<T>::zeros(value.shape);
    }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> constant(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->needs_grad = false;
    return n;
}

template <typename T>
Var<T> leaf(Tensor<T> v, bool trainable = true) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->needs_grad = trainable;
    return n;
}

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backprop) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->needs_grad) n->needs_grad = true;
    if (n->needs_grad) n->backprop = std::move(backprop);
    return n;
}

// Reverse topological order from root, restricted to grad-requiring nodes.
template <typename T>
std::vector<Node<T>*> topo_order(const Var<T>& root) {
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    // Iterative post-order DFS.
    std::vector<std::pair<Node<T>*, size_t>> stack;
    if (root->needs_grad) stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx++].get();
            if (p->needs_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;  // parents before children; iterate in reverse for backprop
}

// Backpropagate from a scalar root (numel()==1).
template <typename T>
void backward(const Var<T>& root) {
    if (root->value.numel() != 1) throw InputError("backward: root must be a scalar");
    if (!root->needs_grad) return;
    auto order = topo_order(root);
    root->ensure_grad();
    root->grad.data[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backprop && !n->grad.data.empty()) n->backprop(*n);
    }
}

// Drop accumulated gradients on the given leaves (optimizer step boundary).
template <typename T>
void zero_grad(const std::vector<Var<T>>& leaves) {
    for (auto& l : leaves)
        if (!l->grad.data.empty()) std::fill(l->grad.data.begin(), l->grad.data.end(), T(0));
}

}  // namespace ag
}  // namespace fia

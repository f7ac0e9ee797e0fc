#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "camforge/tensor.hpp"

namespace camforge::ad {

// Reverse-mode differentiation over a recorded DAG. Nodes hold a value, a
// gradient buffer of the same shape, and a backward rule that scatters the
// node's gradient into its parents. The graph is acyclic by construction
// (shared_ptr edges only point at already-built nodes).
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool backward_done = false;  // set on a node used as a backward root
    std::vector<Var> parents;
    std::function<void(Node&)> backward_rule;  // may be empty for leaves

    explicit Node(Tensor v) : value(std::move(v)), grad(value.shape) {}
};

inline Var constant(Tensor v) { return std::make_shared<Node>(std::move(v)); }

inline Var param(Tensor v) {
    auto n = std::make_shared<Node>(std::move(v));
    n->requires_grad = true;
    return n;
}

inline Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> rule) {
    auto n = std::make_shared<Node>(std::move(value));
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_rule = std::move(rule);
    }
    return n;
}

// Reachable subgraph in reverse topological order (root last).
inline std::vector<Node*> topo_order(const Var& root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // iterative DFS; the graph can be deep for long op chains
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* parent = node->parents[idx++].get();
            if (seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

// Propagates d(root)/d(node) into every reachable node's grad buffer.
// A second call on the same root without reset() is rejected.
inline void backward(const Var& root) {
    if (!root->value.is_scalar())
        throw std::invalid_argument("backward: root must be scalar, got " + root->value.shape_str());
    if (root->backward_done)
        throw std::logic_error("backward: called twice without reset");
    auto order = topo_order(root);
    for (Node* n : order) std::fill(n->grad.data.begin(), n->grad.data.end(), 0.0);
    root->grad.data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_rule) n->backward_rule(*n);
    }
    root->backward_done = true;
}

inline void reset(const Var& root) {
    for (Node* n : topo_order(root)) {
        std::fill(n->grad.data.begin(), n->grad.data.end(), 0.0);
        n->backward_done = false;
    }
}

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// f must build a scalar graph from its input variable.
inline double finite_diff_check(const std::function<Var(const Var&)>& f, const Tensor& x,
                                double eps) {
    if (!(eps > 0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
    auto p = param(x);
    auto y = f(p);
    if (!y->value.is_scalar())
        throw std::invalid_argument("finite_diff_check: f must be scalar-valued, got " +
                                    y->value.shape_str());
    backward(y);
    const Tensor analytic = p->grad;

    double max_err = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        Tensor xp = x, xm = x;
        xp.data[i] += eps;
        xm.data[i] -= eps;
        const double fp = f(constant(std::move(xp)))->value.scalar();
        const double fm = f(constant(std::move(xm)))->value.scalar();
        const double fd = (fp - fm) / (2.0 * eps);
        const double a = analytic.data[i];
        const double err = std::abs(a - fd) / std::max(1.0, std::abs(a));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace camforge::ad

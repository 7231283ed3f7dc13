#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pmf/tensor.hpp"

namespace pmf {

/// One vertex of the reverse-mode tape: a value, its lazily allocated
/// gradient, and the closure that pushes the gradient to its inputs.
template <typename Scalar>
struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;

    Tensor<Scalar>& grad_buffer()
    {
        if (grad.empty() && value.numel() > 0) {
            grad = Tensor<Scalar>(value.shape());
        }
        return grad;
    }
};

namespace detail {
inline bool& grad_mode_flag()
{
    thread_local bool enabled = true;
    return enabled;
}
} // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables tape recording on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Shared handle to a tape node. Copies alias the same node, so a module
/// holding a parameter Var and an optimizer holding it see one tensor.
template <typename Scalar>
class Var {
public:
    using NodeType = Node<Scalar>;

    Var() = default;

    explicit Var(Tensor<Scalar> value, bool requires_grad = false) : node_(std::make_shared<NodeType>())
    {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    /// Builds an interior node. The closure is recorded only when grad mode
    /// is on and at least one input needs a gradient.
    static Var from_op(Tensor<Scalar> value, std::vector<Var> inputs, std::function<void(NodeType&)> backward_fn)
    {
        Var out(std::move(value));
        if (!grad_enabled()) {
            return out;
        }
        bool any = false;
        for (const auto& in : inputs) {
            any = any || (in.defined() && in.node_->requires_grad);
        }
        if (!any) {
            return out;
        }
        out.node_->requires_grad = true;
        out.node_->inputs.reserve(inputs.size());
        for (auto& in : inputs) {
            out.node_->inputs.push_back(in.node_);
        }
        out.node_->backward_fn = std::move(backward_fn);
        return out;
    }

    [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
    [[nodiscard]] const Tensor<Scalar>& value() const { return node_->value; }
    Tensor<Scalar>& mutable_value() { return node_->value; }
    [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
    [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
    [[nodiscard]] bool has_grad() const { return !node_->grad.empty(); }
    [[nodiscard]] const Tensor<Scalar>& grad() const { return node_->grad; }
    void zero_grad() { node_->grad = Tensor<Scalar>(); }

    [[nodiscard]] const NodeType* node() const { return node_.get(); }
    [[nodiscard]] const std::shared_ptr<NodeType>& node_ptr() const { return node_; }

private:
    std::shared_ptr<NodeType> node_;
};

/// Reverse sweep from a single-element root, seeded with 1.
template <typename Scalar>
void backward(const Var<Scalar>& root)
{
    if (root.value().numel() != 1) {
        throw ContractError("backward() needs a scalar root, got " + to_string(root.shape()));
    }
    using NodeType = Node<Scalar>;
    NodeType* start = const_cast<NodeType*>(root.node());
    if (!start->requires_grad) {
        return;
    }

    // Iterative post-order DFS gives a topological order of the tape.
    std::vector<NodeType*> order;
    std::unordered_set<NodeType*> visited;
    std::vector<std::pair<NodeType*, std::size_t>> stack{{start, 0}};
    visited.insert(start);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            NodeType* child = node->inputs[next++].get();
            if (child != nullptr && child->requires_grad && visited.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    start->grad_buffer().array() += Scalar(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeType* node = *it;
        if (node->backward_fn && !node->grad.empty()) {
            node->backward_fn(*node);
            // Interior gradients are consumed; only leaves keep theirs.
            node->grad = Tensor<Scalar>();
        }
    }
}

} // namespace pmf

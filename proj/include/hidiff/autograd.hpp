#pragma once

#include "hidiff/tensor.hpp"

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

namespace hidiff {

// Reverse-mode tape. Every differentiable op produces a Node holding its
// value, its parents and a closure that pushes the node's gradient into the
// parents. The graph lives as long as some Var refers to its output.
template <std::floating_point T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor<T>& grad_buffer() {
        if (grad.empty() && !value.empty()) grad = Tensor<T>::zeros_like(value);
        return grad;
    }
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

inline bool grad_enabled() noexcept { return detail::grad_enabled; }

// Disables graph recording for the lifetime of the guard (inference, finite
// differences).
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <std::floating_point T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Tensor<T>& grad() const { return node_->grad; }
    Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    const Shape& shape() const { return node_->value.shape(); }
    Node<T>* node() const noexcept { return node_.get(); }
    const std::shared_ptr<Node<T>>& ptr() const noexcept { return node_; }

    void zero_grad() {
        if (node_) node_->grad = Tensor<T>();
    }

    // Runs the tape from this (scalar) node. Gradients accumulate into every
    // reachable node that requires them.
    void backward() const;

    // Builds the output of an op. Parents and the closure are dropped when no
    // input requires a gradient or recording is disabled.
    static Var make(Tensor<T> value, std::vector<Var> inputs, std::function<void(Node<T>&)> fn) {
        Var out(std::move(value));
        if (!grad_enabled()) return out;
        bool any = false;
        for (const auto& in : inputs) any = any || in.requires_grad();
        if (!any) return out;
        out.node_->requires_grad = true;
        out.node_->parents.reserve(inputs.size());
        for (auto& in : inputs) out.node_->parents.push_back(in.node_);
        out.node_->backward_fn = std::move(fn);
        return out;
    }

private:
    std::shared_ptr<Node<T>> node_;
};

template <std::floating_point T>
void Var<T>::backward() const {
    if (!node_) return;
    if (node_->value.size() != 1) throw std::logic_error("backward() requires a scalar output");
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node<T>* p = n->parents[i++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && !n->grad.empty()) {
            n->backward_fn(*n);
            // interior gradients are not needed once propagated
            if (!n->parents.empty()) n->grad = Tensor<T>();
        }
    }
}

// Parent helper for backward closures: only allocate/accumulate when needed.
template <std::floating_point T>
inline Tensor<T>* parent_grad(Node<T>& n, size_t i) {
    Node<T>* p = n.parents[i].get();
    return p->requires_grad ? &p->grad_buffer() : nullptr;
}

}  // namespace hidiff

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "csds/errors.hpp"

namespace csds {

/// Thread-local switch: when false, ops do not record the backward graph.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev_; }
    bool prev_;
};

/// Dense row-major float tensor with reverse-mode autodiff.
/// Images and activations use B,C,H,W order. A Tensor is a cheap handle on a
/// shared node; the recorded graph is confined to one thread.
class Tensor {
public:
    struct Node {
        std::vector<int> shape;
        std::vector<float> data;
        std::vector<float> grad;   // allocated lazily, same length as data
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void()> backprop;  // accumulates into parent grads
    };

    Tensor() = default;

    explicit Tensor(std::vector<int> shape, bool requires_grad = false)
        : node_(std::make_shared<Node>()) {
        node_->shape = std::move(shape);
        node_->data.assign(numel_of(node_->shape), 0.0f);
        node_->requires_grad = requires_grad;
    }

    static Tensor from_data(std::vector<int> shape, std::vector<float> data,
                            bool requires_grad = false) {
        if (numel_of(shape) != data.size())
            throw DimensionError("data length does not match shape product");
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->data = std::move(data);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor full(std::vector<int> shape, float value, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        std::fill(t.data().begin(), t.data().end(), value);
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    std::size_t numel() const { return node_->data.size(); }
    std::size_t size() const { return node_->data.size(); }

    std::vector<float>& data() { return node_->data; }
    const std::vector<float>& data() const { return node_->data; }
    float& operator[](std::size_t i) { return node_->data[i]; }
    float operator[](std::size_t i) const { return node_->data[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::vector<float>& grad() {
        ensure_grad();
        return node_->grad;
    }
    const std::vector<float>& grad() const { return node_->grad; }
    void ensure_grad() {
        if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0f);
    }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
    }
    void drop_grad() { node_->grad.clear(); }

    /// Detached copy of the values, outside any graph.
    Tensor detach_copy() const { return from_data(node_->shape, node_->data, false); }

    bool all_finite() const {
        for (float v : node_->data)
            if (!std::isfinite(v)) return false;
        return true;
    }
    void check_finite(const char* what) const {
#ifndef NDEBUG
        if (!all_finite()) throw NumericError(std::string("non-finite values in ") + what);
#else
        (void)what;
#endif
    }

    /// Reverse-mode pass from a scalar root. Each node's backprop closure is
    /// invoked exactly once, in reverse topological order.
    void backward() {
        if (numel() != 1) throw DimensionError("backward requires a scalar root");
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        topo(node_.get(), seen, order);
        ensure_grad();
        node_->grad[0] = 1.0f;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backprop) (*it)->backprop();
        }
    }

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& handle() const { return node_; }

    static std::size_t numel_of(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d < 0) throw DimensionError("negative dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

private:
    static void topo(Node* n, std::unordered_set<Node*>& seen, std::vector<Node*>& out) {
        // iterative DFS; graphs from deep nets overflow the stack otherwise
        struct Frame { Node* node; std::size_t next; };
        std::vector<Frame> stack;
        if (!seen.insert(n).second) return;
        stack.push_back({n, 0});
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next < f.node->parents.size()) {
                Node* p = f.node->parents[f.next++].get();
                if (seen.insert(p).second) stack.push_back({p, 0});
            } else {
                out.push_back(f.node);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> node_;
};

/// True when the op result must join the graph. Tracked intermediates carry
/// requires_grad so the check is a plain flag scan over the inputs.
inline bool track_grad(std::initializer_list<const Tensor*> inputs) {
    if (!grad_mode()) return false;
    for (const Tensor* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

} // namespace csds

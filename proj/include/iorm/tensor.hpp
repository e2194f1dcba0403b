#pragma once

// Dense row-major tensor with define-by-run reverse-mode differentiation.
//
// Every op that sees an operand with requires_grad records a node holding its
// parents and a backward closure. Node ids grow monotonically in creation
// order, so sorting the reachable set by descending id is a valid reverse
// topological order.

#include "iorm/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

namespace iorm {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

template <typename T>
constexpr const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>) return "f32";
    else return "f64";
}

namespace detail {

inline std::uint64_t next_node_id() {
    static std::atomic<std::uint64_t> counter{0};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

} // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::uint64_t id = detail::next_node_id();
    std::string op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<T>& grad_buffer() {
        if (grad.size() != data.size()) grad.assign(data.size(), T{0});
        return grad;
    }
};

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
        : node_(std::make_shared<Node<T>>()) {
        if (numel_of(shape) != values.size()) {
            throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                                 std::to_string(numel_of(shape)) + " values, got " +
                                 std::to_string(values.size()));
        }
        node_->shape = std::move(shape);
        node_->data = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const std::size_t n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        const std::size_t n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }

    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<T> data() { return node_->data; }
    std::span<const T> data() const { return node_->data; }
    std::vector<T>& values() { return node_->data; }
    const std::vector<T>& values() const { return node_->data; }

    T item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> grad_mut() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad.clear(); }

    const std::string& op() const { return node_->op; }
    std::uint64_t id() const { return node_->id; }
    std::vector<Tensor> parents() const {
        std::vector<Tensor> out;
        for (const auto& p : node_->parents) out.push_back(Tensor(p));
        return out;
    }

    /// Same storage identity (used by parameter-registry audits).
    bool same_as(const Tensor& other) const { return node_ == other.node_; }
    const Node<T>* node_ptr() const { return node_.get(); }
    std::shared_ptr<Node<T>> node() const { return node_; }

    /// Value copy detached from any graph.
    Tensor detach() const { return Tensor(shape(), node_->data, false); }

    explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<Node<T>> node_;
};

namespace detail {

/// Builds an op result; records parents and the closure only when some
/// operand needs a gradient and recording is enabled.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, const char* op,
                      std::initializer_list<const Tensor<T>*> operands,
                      std::function<void(Node<T>&)> backward) {
    Tensor<T> out(std::move(shape), std::move(values));
    bool needs = false;
    if (grad_enabled()) {
        for (const auto* t : operands) needs = needs || (t->defined() && t->requires_grad());
    }
    auto n = out.node();
    n->op = op;
    if (needs) {
        n->requires_grad = true;
        for (const auto* t : operands) {
            if (t->defined()) n->parents.push_back(t->node());
        }
        n->backward_fn = std::move(backward);
    }
    return out;
}

} // namespace detail

/// Populates grads of every requires_grad tensor reachable from `loss`.
/// Gradients accumulate; call zero_grad on parameters between steps.
template <typename T>
void backward(Tensor<T>& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<const Node<T>*> seen;
    std::vector<Node<T>*> stack{loss.node().get()};
    while (!stack.empty()) {
        Node<T>* n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) continue;
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && !seen.count(p.get())) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(), [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });

    loss.grad_mut()[0] += T{1};
    for (Node<T>* n : order) {
        if (n->backward_fn && n->grad.size() == n->data.size()) n->backward_fn(*n);
    }
}

/// Nodes reachable from `root` in forward execution order.
template <typename T>
std::vector<Tensor<T>> recorded_graph(const Tensor<T>& root) {
    std::vector<std::shared_ptr<Node<T>>> all;
    std::unordered_set<const Node<T>*> seen;
    std::vector<std::shared_ptr<Node<T>>> stack{root.node()};
    while (!stack.empty()) {
        auto n = stack.back();
        stack.pop_back();
        if (!seen.insert(n.get()).second) continue;
        all.push_back(n);
        for (const auto& p : n->parents) stack.push_back(p);
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a->id < b->id; });
    std::vector<Tensor<T>> out;
    out.reserve(all.size());
    for (auto& n : all) out.push_back(Tensor<T>(n));
    return out;
}

} // namespace iorm

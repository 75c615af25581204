#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dualvit/errors.hpp"

namespace dualvit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Gradient recording is on by default; NoGradGuard disables it for the
// current thread (evaluation, optimizer updates).
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Finite-value sentinel run after every op. Defaults to on in debug builds.
bool debug_checks_enabled();
void set_debug_checks(bool enabled);

namespace detail {

std::uint64_t next_node_id();

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::uint64_t id = next_node_id();
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents' grads.
    std::function<void(Node&)> backward_fn;

    std::span<T> grad_buffer() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
        return grad;
    }
};

}  // namespace detail

// Dense row-major n-d array. Copies share the same underlying node, so a
// Tensor behaves like a handle: parameters held by a module and the entry in
// a parameter registry are the same storage.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const;
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    std::span<T> mutable_data() { return node_->data; }
    T item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool value) { node_->requires_grad = value; }
    bool has_grad() const { return !node_->grad.empty(); }
    // Empty span when no gradient has been accumulated yet.
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->grad_buffer(); }
    void zero_grad();

    std::uint64_t node_id() const { return node_->id; }
    bool is_leaf() const { return !node_->backward_fn; }

    // Deep copy detached from the tape.
    Tensor clone() const;

    const std::shared_ptr<detail::Node<T>>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node<T>> node_;
};

// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls;
// intermediate gradients are scratch and released afterwards.
template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace dualvit

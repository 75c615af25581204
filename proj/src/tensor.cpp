#include "dualvit/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <functional>
#include <sstream>
#include <unordered_set>

namespace dualvit {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {
thread_local bool t_grad_enabled = true;

#ifdef NDEBUG
std::atomic<bool> g_debug_checks{false};
#else
std::atomic<bool> g_debug_checks{true};
#endif
}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool debug_checks_enabled() { return g_debug_checks.load(std::memory_order_relaxed); }
void set_debug_checks(bool enabled) { g_debug_checks.store(enabled, std::memory_order_relaxed); }

namespace detail {
std::uint64_t next_node_id() {
    static std::atomic<std::uint64_t> counter{0};
    return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<detail::Node<T>>()) {
    for (std::size_t d : shape) {
        if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                             " values, got " + std::to_string(data.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t i) const {
    if (i >= node_->shape.size()) {
        throw DimensionError("axis " + std::to_string(i) + " out of range for " + shape_str(node_->shape));
    }
    return node_->shape[i];
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    return Tensor(node_->shape, node_->data, node_->requires_grad);
}

template <typename T>
void backward(const Tensor<T>& loss) {
    using NodePtr = detail::Node<T>*;
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward(): loss is not connected to any tensor that requires grad");
    }

    // Collect everything reachable through grad-requiring edges.
    std::vector<NodePtr> order;
    std::vector<NodePtr> stack{loss.node().get()};
    std::unordered_set<NodePtr> seen;
    while (!stack.empty()) {
        NodePtr n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) continue;
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad) stack.push_back(p.get());
        }
    }

    // Creation ids are a topological order: inputs always exist before outputs.
    std::sort(order.begin(), order.end(), [](NodePtr a, NodePtr b) { return a->id > b->id; });

    for (NodePtr n : order) {
        if (n->backward_fn) n->grad.assign(n->data.size(), T(0));
    }
    loss.node()->grad_buffer()[0] += T(1);
    for (NodePtr n : order) {
        if (n->backward_fn) n->backward_fn(*n);
    }
    for (NodePtr n : order) {
        if (n->backward_fn) {
            n->grad.clear();
            n->grad.shrink_to_fit();
        }
    }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace dualvit

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dualvit/tensor.hpp"

namespace dualvit {

// Differentiable primitives. All of them record a backward rule when
// gradients are enabled and any input requires grad.

// a[..., r, k] x b[k, c] (shared weight) or b[..., k, c] with the same
// leading dims as a.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Same shape, or b's shape is a trailing suffix of a's (bias, positional
// embedding); the suffix operand is broadcast over the leading dims.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& a);

template <typename T>
Tensor<T> layernorm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T>
Tensor<T> gelu(const Tensor<T>& a);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length);

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& a, std::size_t axis, std::span<const std::size_t> sizes);

// Mean over one axis; the axis is removed from the shape.
template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::size_t axis);

// Sum / mean of every element, shape {}.
template <typename T>
Tensor<T> sum(const Tensor<T>& a);

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

template <typename T>
Tensor<T> permute(const Tensor<T>& a, std::span<const std::size_t> order);

// [n, ...a.shape], every copy shares a's values.
template <typename T>
Tensor<T> expand_leading(const Tensor<T>& a, std::size_t count);

// Mean softmax cross-entropy over the batch; logits [B, classes].
template <typename T>
Tensor<T> cross_entropy_with_logits(const Tensor<T>& logits, std::span<const int> labels);

// Counts multiply-accumulates issued by matmul on this thread while alive.
// Nested tallies each see the full count.
class MacTally {
public:
    MacTally();
    ~MacTally();
    MacTally(const MacTally&) = delete;
    MacTally& operator=(const MacTally&) = delete;

    std::uint64_t macs() const { return macs_; }
    void add(std::uint64_t macs) {
        macs_ += macs;
        if (outer_) outer_->add(macs);
    }

private:
    std::uint64_t macs_ = 0;
    MacTally* outer_ = nullptr;
};

}  // namespace dualvit

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dualvit/ops.hpp"
#include "dualvit/random.hpp"
#include "dualvit/tensor.hpp"

namespace dualvit {

inline constexpr double kInitStd = 0.02;
inline constexpr double kLayerNormEps = 1e-6;

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
};

// Ordered list of every trainable tensor, keyed by dotted module path.
// Entries alias the tensors held by the modules.
template <typename T>
class ParamRegistry {
public:
    void add(std::string name, Tensor<T> tensor);

    std::size_t size() const { return entries_.size(); }
    std::size_t total_numel() const;
    const NamedParam<T>* find(const std::string& name) const;
    void zero_grad();

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    const NamedParam<T>& operator[](std::size_t i) const { return entries_[i]; }

private:
    std::vector<NamedParam<T>> entries_;
};

// y = x W + b with W stored [d_in x d_out]; b is optional.
template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(std::size_t d_in, std::size_t d_out, Rng& rng, bool with_bias = true);

    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(const std::string& prefix, ParamRegistry<T>& registry) const;

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }
    bool has_bias() const { return bias.defined(); }

    Tensor<T> weight;
    Tensor<T> bias;
};

template <typename T>
class LayerNorm {
public:
    LayerNorm() = default;
    explicit LayerNorm(std::size_t dim);

    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(const std::string& prefix, ParamRegistry<T>& registry) const;

    Tensor<T> gamma;
    Tensor<T> beta;
};

// Multi-head attention. q is [..., n_q, d]; k and v are [..., n_kv, d].
// Heads are the h contiguous d/h-wide slices of each projected token.
// The key projection has no bias: softmax is invariant to a per-query
// constant, so that bias would receive an identically zero gradient.
template <typename T>
class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng);

    // `weights`, when given, receives the softmax matrix [B, h, n_q, n_kv].
    Tensor<T> forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                      Tensor<T>* weights = nullptr) const;
    Tensor<T> self_attention(const Tensor<T>& x) const { return forward(x, x, x); }
    void collect(const std::string& prefix, ParamRegistry<T>& registry) const;

    std::size_t dim() const { return q_proj.in_features(); }
    std::size_t heads() const { return heads_; }
    std::size_t head_dim() const { return dim() / heads_; }

    Linear<T> q_proj;
    Linear<T> k_proj;
    Linear<T> v_proj;
    Linear<T> o_proj;

private:
    std::size_t heads_ = 1;
};

// contract(gelu(expand(x))), applied token-wise.
template <typename T>
class FeedForward {
public:
    FeedForward() = default;
    FeedForward(std::size_t dim, std::size_t ratio, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(const std::string& prefix, ParamRegistry<T>& registry) const;

    std::size_t ratio() const { return expand.out_features() / expand.in_features(); }

    Linear<T> expand;
    Linear<T> contract;
};

// Truncated normal (std 0.02, cut at 2 std) tensor, used for linear weights,
// semantic queries and positional embeddings.
template <typename T>
Tensor<T> trunc_normal_tensor(Shape shape, Rng& rng, double std = kInitStd);

// Copies values (not identity) from src into dst; shapes must agree.
template <typename T>
void copy_values(const Tensor<T>& src, Tensor<T>& dst);

}  // namespace dualvit

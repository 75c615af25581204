#include "dualvit/nn.hpp"

#include <algorithm>
#include <cmath>

namespace dualvit {

template <typename T>
void ParamRegistry<T>::add(std::string name, Tensor<T> tensor) {
    if (find(name) != nullptr) throw ConfigError("duplicate parameter name: " + name);
    entries_.push_back({std::move(name), std::move(tensor)});
}

template <typename T>
std::size_t ParamRegistry<T>::total_numel() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

template <typename T>
const NamedParam<T>* ParamRegistry<T>::find(const std::string& name) const {
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](const NamedParam<T>& e) { return e.name == name; });
    return it == entries_.end() ? nullptr : &*it;
}

template <typename T>
void ParamRegistry<T>::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename T>
Tensor<T> trunc_normal_tensor(Shape shape, Rng& rng, double std) {
    std::vector<T> data(shape_numel(shape));
    for (T& v : data) v = static_cast<T>(rng.truncated_normal(std));
    return Tensor<T>(std::move(shape), std::move(data), true);
}

template <typename T>
void copy_values(const Tensor<T>& src, Tensor<T>& dst) {
    if (src.shape() != dst.shape()) {
        throw DimensionError("copy_values: " + shape_str(src.shape()) + " into " + shape_str(dst.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
}

template <typename T>
Linear<T>::Linear(std::size_t d_in, std::size_t d_out, Rng& rng, bool with_bias)
    : weight(trunc_normal_tensor<T>({d_in, d_out}, rng)) {
    if (with_bias) bias = Tensor<T>::zeros({d_out}, true);
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) const {
    if (x.ndim() == 0 || x.shape().back() != in_features()) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " does not end in " +
                             std::to_string(in_features()) + " features");
    }
    auto y = matmul(x, weight);
    return has_bias() ? add(y, bias) : y;
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParamRegistry<T>& registry) const {
    registry.add(prefix + ".weight", weight);
    if (has_bias()) registry.add(prefix + ".bias", bias);
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t dim)
    : gamma(Tensor<T>::full({dim}, T(1), true)), beta(Tensor<T>::zeros({dim}, true)) {}

template <typename T>
Tensor<T> LayerNorm<T>::forward(const Tensor<T>& x) const {
    return layernorm(x, gamma, beta, static_cast<T>(kLayerNormEps));
}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, ParamRegistry<T>& registry) const {
    registry.add(prefix + ".gamma", gamma);
    registry.add(prefix + ".beta", beta);
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng) : heads_(heads) {
    if (heads == 0 || dim % heads != 0) {
        throw ConfigError("attention: channel dim " + std::to_string(dim) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    }
    q_proj = Linear<T>(dim, dim, rng);
    k_proj = Linear<T>(dim, dim, rng, false);
    v_proj = Linear<T>(dim, dim, rng);
    o_proj = Linear<T>(dim, dim, rng);
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                         Tensor<T>* weights) const {
    const std::size_t d = dim();
    auto check = [d](const Tensor<T>& t, const char* role) {
        if ((t.ndim() != 2 && t.ndim() != 3) || t.shape().back() != d) {
            throw DimensionError(std::string("attention: ") + role + " " + shape_str(t.shape()) +
                                 " is not [tokens x " + std::to_string(d) + "] (optionally batched)");
        }
    };
    check(q, "query");
    check(k, "key");
    check(v, "value");
    if (q.ndim() != k.ndim() || k.shape() != v.shape() || (q.ndim() == 3 && q.dim(0) != k.dim(0))) {
        throw DimensionError("attention: key " + shape_str(k.shape()) + " / value " + shape_str(v.shape()) +
                             " / query " + shape_str(q.shape()) + " token layout mismatch");
    }
    const bool batched = q.ndim() == 3;
    const std::size_t batch = batched ? q.dim(0) : 1;
    const std::size_t nq = q.dim(q.ndim() - 2);
    const std::size_t nkv = k.dim(k.ndim() - 2);
    const std::size_t h = heads_;
    const std::size_t dh = d / h;

    static constexpr std::size_t kHeadsFirst[] = {0, 2, 1, 3};      // [B,n,h,dh] -> [B,h,n,dh]
    static constexpr std::size_t kHeadsFirstT[] = {0, 2, 3, 1};     // [B,n,h,dh] -> [B,h,dh,n]
    auto qh = permute(reshape(q_proj.forward(q), {batch, nq, h, dh}), std::span(kHeadsFirst));
    auto kt = permute(reshape(k_proj.forward(k), {batch, nkv, h, dh}), std::span(kHeadsFirstT));
    auto vh = permute(reshape(v_proj.forward(v), {batch, nkv, h, dh}), std::span(kHeadsFirst));

    auto scores = scale(matmul(qh, kt), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    auto attn = softmax_lastdim(scores);
    if (weights) *weights = attn;
    auto mixed = matmul(attn, vh);  // [B,h,nq,dh]
    auto merged = reshape(permute(mixed, std::span(kHeadsFirst)), batched ? Shape{batch, nq, d} : Shape{nq, d});
    return o_proj.forward(merged);
}

template <typename T>
void MultiHeadAttention<T>::collect(const std::string& prefix, ParamRegistry<T>& registry) const {
    q_proj.collect(prefix + ".q_proj", registry);
    k_proj.collect(prefix + ".k_proj", registry);
    v_proj.collect(prefix + ".v_proj", registry);
    o_proj.collect(prefix + ".o_proj", registry);
}

template <typename T>
FeedForward<T>::FeedForward(std::size_t dim, std::size_t ratio, Rng& rng) {
    if (ratio == 0) throw ConfigError("feed-forward: expansion ratio must be positive");
    expand = Linear<T>(dim, dim * ratio, rng);
    contract = Linear<T>(dim * ratio, dim, rng);
}

template <typename T>
Tensor<T> FeedForward<T>::forward(const Tensor<T>& x) const {
    return contract.forward(gelu(expand.forward(x)));
}

template <typename T>
void FeedForward<T>::collect(const std::string& prefix, ParamRegistry<T>& registry) const {
    expand.collect(prefix + ".expand", registry);
    contract.collect(prefix + ".contract", registry);
}

template class ParamRegistry<float>;
template class ParamRegistry<double>;
template class Linear<float>;
template class Linear<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class MultiHeadAttention<float>;
template class MultiHeadAttention<double>;
template class FeedForward<float>;
template class FeedForward<double>;
template Tensor<float> trunc_normal_tensor<float>(Shape, Rng&, double);
template Tensor<double> trunc_normal_tensor<double>(Shape, Rng&, double);
template void copy_values<float>(const Tensor<float>&, Tensor<float>&);
template void copy_values<double>(const Tensor<double>&, Tensor<double>&);

}  // namespace dualvit

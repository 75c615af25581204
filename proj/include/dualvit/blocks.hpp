#pragma once

#include <cstddef>
#include <string>
#include <utility>

#include "dualvit/nn.hpp"

namespace dualvit {

// Pixel-pathway tokens with their spatial layout. tokens is [B, n, d] (or
// [n, d]) with n == height * width, row-major over the grid.
template <typename T>
struct FeatureMap {
    Tensor<T> tokens;
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t count() const { return tokens.dim(tokens.ndim() - 2); }
    std::size_t channels() const { return tokens.shape().back(); }
    void validate() const;
};

// Semantic-pathway tokens, [B, m, d] (or [m, d]).
template <typename T>
struct SemanticTokens {
    Tensor<T> tokens;

    std::size_t count() const { return tokens.dim(tokens.ndim() - 2); }
    std::size_t channels() const { return tokens.shape().back(); }
};

// Semantic-pathway layouts compared in the Dual block ablation.
//   A: no semantic self-attention
//   B: no semantic feed-forward
//   C: cross-attention before self-attention
//   D: self-attention, cross-attention, feed-forward (the full block)
enum class AblationVariant { A, B, C, D };

char variant_letter(AblationVariant v);
AblationVariant parse_variant(const std::string& text);

// Pre-LN block: x' = MHA(LN x) + x; out = FFN(LN x') + x'.
template <typename T>
class TransformerBlock {
public:
    TransformerBlock() = default;
    TransformerBlock(std::size_t dim, std::size_t heads, std::size_t ffn_ratio, Rng& rng);

    FeatureMap<T> forward(const FeatureMap<T>& x) const;
    Tensor<T> forward_tokens(const Tensor<T>& x) const;
    void collect(const std::string& prefix, ParamRegistry<T>& registry) const;

    LayerNorm<T> norm_attn;
    MultiHeadAttention<T> attn;
    LayerNorm<T> norm_ffn;
    FeedForward<T> ffn;
};

// Two-pathway block. The semantic pathway refines z with self-attention,
// pulls from LN(x) with cross-attention and applies its FFN; the pixel
// pathway then attends from LN(x) to LN of the updated z. LN(x) is computed
// once and used by both cross-attentions.
template <typename T>
class DualBlock {
public:
    DualBlock() = default;
    DualBlock(std::size_t dim, std::size_t heads, std::size_t ffn_ratio_pixel, std::size_t ffn_ratio_semantic,
              Rng& rng, AblationVariant variant = AblationVariant::D);

    std::pair<FeatureMap<T>, SemanticTokens<T>> forward(const FeatureMap<T>& x, const SemanticTokens<T>& z) const;
    void collect(const std::string& prefix, ParamRegistry<T>& registry) const;

    AblationVariant variant() const { return variant_; }
    bool has_semantic_self_attention() const { return variant_ != AblationVariant::A; }
    bool has_semantic_ffn() const { return variant_ != AblationVariant::B; }

    LayerNorm<T> norm_x;
    // semantic pathway
    LayerNorm<T> sem_norm_in;  // before the first attention (absent in A)
    MultiHeadAttention<T> sem_self_attn;
    LayerNorm<T> sem_norm_mid;  // before the second attention
    MultiHeadAttention<T> sem_cross_attn;
    LayerNorm<T> sem_norm_ffn;
    FeedForward<T> sem_ffn;
    // pixel pathway
    LayerNorm<T> pix_norm_kv;
    MultiHeadAttention<T> pix_cross_attn;
    LayerNorm<T> pix_norm_ffn;
    FeedForward<T> pix_ffn;

private:
    AblationVariant variant_ = AblationVariant::D;
};

// Joint self-attention over [x || z], then separate FFNs per pathway.
template <typename T>
class MergeBlock {
public:
    MergeBlock() = default;
    MergeBlock(std::size_t dim, std::size_t heads, std::size_t ffn_ratio_pixel, std::size_t ffn_ratio_semantic,
               Rng& rng);

    std::pair<FeatureMap<T>, SemanticTokens<T>> forward(const FeatureMap<T>& x, const SemanticTokens<T>& z) const;
    void collect(const std::string& prefix, ParamRegistry<T>& registry) const;

    LayerNorm<T> norm_joint;
    MultiHeadAttention<T> attn;
    LayerNorm<T> norm_ffn_x;
    FeedForward<T> ffn_x;
    LayerNorm<T> norm_ffn_z;
    FeedForward<T> ffn_z;
};

// Non-overlapping p x p patches, flattened in (row, col, channel) order,
// projected to out_dim and layer-normalized.
template <typename T>
class PatchEmbed {
public:
    PatchEmbed() = default;
    PatchEmbed(std::size_t in_channels, std::size_t out_dim, std::size_t patch, Rng& rng);

    FeatureMap<T> forward(const FeatureMap<T>& x) const;
    void collect(const std::string& prefix, ParamRegistry<T>& registry) const;

    std::size_t patch() const { return patch_; }

    Linear<T> proj;
    LayerNorm<T> norm;

private:
    std::size_t patch_ = 1;
};

// Carries semantic tokens across a stage boundary: Linear(C_i -> C_next) + LN.
template <typename T>
class SemanticTransition {
public:
    SemanticTransition() = default;
    SemanticTransition(std::size_t in_dim, std::size_t out_dim, Rng& rng);

    SemanticTokens<T> forward(const SemanticTokens<T>& z) const;
    void collect(const std::string& prefix, ParamRegistry<T>& registry) const;

    Linear<T> proj;
    LayerNorm<T> norm;
};

}  // namespace dualvit

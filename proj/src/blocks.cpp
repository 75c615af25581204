#include "dualvit/blocks.hpp"

#include <array>

namespace dualvit {

namespace {

template <typename T>
std::size_t token_axis(const Tensor<T>& t) {
    return t.ndim() - 2;
}

template <typename T>
void require_tokens(const Tensor<T>& t, std::size_t dim, const char* who) {
    if ((t.ndim() != 2 && t.ndim() != 3) || t.shape().back() != dim) {
        throw DimensionError(std::string(who) + ": tokens " + shape_str(t.shape()) + " are not [.., n, " +
                             std::to_string(dim) + "]");
    }
}

template <typename T>
void require_same_channels(const FeatureMap<T>& x, const SemanticTokens<T>& z, const char* who) {
    if (x.channels() != z.channels()) {
        throw ConfigError(std::string(who) + ": pixel tokens have " + std::to_string(x.channels()) +
                          " channels but semantic tokens have " + std::to_string(z.channels()));
    }
    if (x.tokens.ndim() != z.tokens.ndim() || (x.tokens.ndim() == 3 && x.tokens.dim(0) != z.tokens.dim(0))) {
        throw DimensionError(std::string(who) + ": batch layout differs between " + shape_str(x.tokens.shape()) +
                             " and " + shape_str(z.tokens.shape()));
    }
}

}  // namespace

char variant_letter(AblationVariant v) {
    switch (v) {
        case AblationVariant::A: return 'A';
        case AblationVariant::B: return 'B';
        case AblationVariant::C: return 'C';
        case AblationVariant::D: return 'D';
    }
    return '?';
}

AblationVariant parse_variant(const std::string& text) {
    if (text == "A" || text == "a") return AblationVariant::A;
    if (text == "B" || text == "b") return AblationVariant::B;
    if (text == "C" || text == "c") return AblationVariant::C;
    if (text == "D" || text == "d") return AblationVariant::D;
    throw ConfigError("unknown ablation variant '" + text + "' (expected A, B, C or D)");
}

template <typename T>
void FeatureMap<T>::validate() const {
    if (tokens.ndim() != 2 && tokens.ndim() != 3) {
        throw DimensionError("feature map tokens must be [n, d] or [B, n, d], got " + shape_str(tokens.shape()));
    }
    if (height * width != count()) {
        throw DimensionError("feature map " + std::to_string(height) + "x" + std::to_string(width) + " does not hold " +
                             std::to_string(count()) + " tokens");
    }
}

// ---------------------------------------------------------------------------

template <typename T>
TransformerBlock<T>::TransformerBlock(std::size_t dim, std::size_t heads, std::size_t ffn_ratio, Rng& rng)
    : norm_attn(dim), attn(dim, heads, rng), norm_ffn(dim), ffn(dim, ffn_ratio, rng) {}

template <typename T>
Tensor<T> TransformerBlock<T>::forward_tokens(const Tensor<T>& x) const {
    require_tokens(x, attn.dim(), "transformer block");
    auto xn = norm_attn.forward(x);
    auto x1 = add(attn.forward(xn, xn, xn), x);
    return add(ffn.forward(norm_ffn.forward(x1)), x1);
}

template <typename T>
FeatureMap<T> TransformerBlock<T>::forward(const FeatureMap<T>& x) const {
    x.validate();
    return {forward_tokens(x.tokens), x.height, x.width};
}

template <typename T>
void TransformerBlock<T>::collect(const std::string& prefix, ParamRegistry<T>& registry) const {
    norm_attn.collect(prefix + ".norm_attn", registry);
    attn.collect(prefix + ".attn", registry);
    norm_ffn.collect(prefix + ".norm_ffn", registry);
    ffn.collect(prefix + ".ffn", registry);
}

// ---------------------------------------------------------------------------

template <typename T>
DualBlock<T>::DualBlock(std::size_t dim, std::size_t heads, std::size_t ffn_ratio_pixel,
                        std::size_t ffn_ratio_semantic, Rng& rng, AblationVariant variant)
    : variant_(variant) {
    norm_x = LayerNorm<T>(dim);
    if (has_semantic_self_attention()) {
        sem_norm_in = LayerNorm<T>(dim);
        sem_self_attn = MultiHeadAttention<T>(dim, heads, rng);
    }
    sem_norm_mid = LayerNorm<T>(dim);
    sem_cross_attn = MultiHeadAttention<T>(dim, heads, rng);
    if (has_semantic_ffn()) {
        sem_norm_ffn = LayerNorm<T>(dim);
        sem_ffn = FeedForward<T>(dim, ffn_ratio_semantic, rng);
    }
    pix_norm_kv = LayerNorm<T>(dim);
    pix_cross_attn = MultiHeadAttention<T>(dim, heads, rng);
    pix_norm_ffn = LayerNorm<T>(dim);
    pix_ffn = FeedForward<T>(dim, ffn_ratio_pixel, rng);
}

template <typename T>
std::pair<FeatureMap<T>, SemanticTokens<T>> DualBlock<T>::forward(const FeatureMap<T>& x,
                                                                  const SemanticTokens<T>& z) const {
    x.validate();
    require_same_channels(x, z, "dual block");
    require_tokens(x.tokens, pix_cross_attn.dim(), "dual block");
    if (z.count() > x.count()) {
        throw ConfigError("dual block: " + std::to_string(z.count()) + " semantic tokens exceed " +
                          std::to_string(x.count()) + " pixel tokens");
    }

    const auto xn = norm_x.forward(x.tokens);

    // Semantic pathway.
    Tensor<T> z_next;
    if (variant_ == AblationVariant::C) {
        auto z1 = add(sem_cross_attn.forward(sem_norm_in.forward(z.tokens), xn, xn), z.tokens);
        auto z1n = sem_norm_mid.forward(z1);
        auto z2 = add(sem_self_attn.forward(z1n, z1n, z1n), z1);
        z_next = add(sem_ffn.forward(sem_norm_ffn.forward(z2)), z2);
    } else {
        Tensor<T> z1 = z.tokens;
        if (has_semantic_self_attention()) {
            auto zn = sem_norm_in.forward(z.tokens);
            z1 = add(sem_self_attn.forward(zn, zn, zn), z.tokens);
        }
        auto z2 = add(sem_cross_attn.forward(sem_norm_mid.forward(z1), xn, xn), z1);
        z_next = has_semantic_ffn() ? add(sem_ffn.forward(sem_norm_ffn.forward(z2)), z2) : z2;
    }

    // Pixel pathway, keyed on the updated semantic tokens.
    auto zk = pix_norm_kv.forward(z_next);
    auto x1 = add(pix_cross_attn.forward(xn, zk, zk), x.tokens);
    auto x_next = add(pix_ffn.forward(pix_norm_ffn.forward(x1)), x1);
    return {FeatureMap<T>{x_next, x.height, x.width}, SemanticTokens<T>{z_next}};
}

template <typename T>
void DualBlock<T>::collect(const std::string& prefix, ParamRegistry<T>& registry) const {
    norm_x.collect(prefix + ".norm_x", registry);
    if (has_semantic_self_attention()) {
        sem_norm_in.collect(prefix + ".sem.norm_in", registry);
        sem_self_attn.collect(prefix + ".sem.self_attn", registry);
    }
    sem_norm_mid.collect(prefix + ".sem.norm_mid", registry);
    sem_cross_attn.collect(prefix + ".sem.cross_attn", registry);
    if (has_semantic_ffn()) {
        sem_norm_ffn.collect(prefix + ".sem.norm_ffn", registry);
        sem_ffn.collect(prefix + ".sem.ffn", registry);
    }
    pix_norm_kv.collect(prefix + ".pix.norm_kv", registry);
    pix_cross_attn.collect(prefix + ".pix.cross_attn", registry);
    pix_norm_ffn.collect(prefix + ".pix.norm_ffn", registry);
    pix_ffn.collect(prefix + ".pix.ffn", registry);
}

// ---------------------------------------------------------------------------

template <typename T>
MergeBlock<T>::MergeBlock(std::size_t dim, std::size_t heads, std::size_t ffn_ratio_pixel,
                          std::size_t ffn_ratio_semantic, Rng& rng)
    : norm_joint(dim),
      attn(dim, heads, rng),
      norm_ffn_x(dim),
      ffn_x(dim, ffn_ratio_pixel, rng),
      norm_ffn_z(dim),
      ffn_z(dim, ffn_ratio_semantic, rng) {}

template <typename T>
std::pair<FeatureMap<T>, SemanticTokens<T>> MergeBlock<T>::forward(const FeatureMap<T>& x,
                                                                   const SemanticTokens<T>& z) const {
    x.validate();
    if (x.channels() != attn.dim() || z.channels() != attn.dim()) {
        throw DimensionError("merge block: expected " + std::to_string(attn.dim()) + " channels, got " +
                             shape_str(x.tokens.shape()) + " and " + shape_str(z.tokens.shape()));
    }
    require_same_channels(x, z, "merge block");
    const std::size_t axis = token_axis(x.tokens);
    auto joined = concat<T>({x.tokens, z.tokens}, axis);
    auto yn = norm_joint.forward(joined);
    auto mixed = add(attn.forward(yn, yn, yn), joined);
    const std::array<std::size_t, 2> sizes{x.count(), z.count()};
    auto parts = split(mixed, axis, std::span<const std::size_t>(sizes));
    auto x_next = add(ffn_x.forward(norm_ffn_x.forward(parts[0])), parts[0]);
    auto z_next = add(ffn_z.forward(norm_ffn_z.forward(parts[1])), parts[1]);
    return {FeatureMap<T>{x_next, x.height, x.width}, SemanticTokens<T>{z_next}};
}

template <typename T>
void MergeBlock<T>::collect(const std::string& prefix, ParamRegistry<T>& registry) const {
    norm_joint.collect(prefix + ".norm_joint", registry);
    attn.collect(prefix + ".attn", registry);
    norm_ffn_x.collect(prefix + ".norm_ffn_x", registry);
    ffn_x.collect(prefix + ".ffn_x", registry);
    norm_ffn_z.collect(prefix + ".norm_ffn_z", registry);
    ffn_z.collect(prefix + ".ffn_z", registry);
}

// ---------------------------------------------------------------------------

template <typename T>
PatchEmbed<T>::PatchEmbed(std::size_t in_channels, std::size_t out_dim, std::size_t patch, Rng& rng)
    : proj(in_channels * patch * patch, out_dim, rng), norm(out_dim), patch_(patch) {
    if (patch == 0) throw ConfigError("patch embedding: patch size must be positive");
}

template <typename T>
FeatureMap<T> PatchEmbed<T>::forward(const FeatureMap<T>& x) const {
    x.validate();
    const std::size_t p = patch_;
    if (x.height % p != 0 || x.width % p != 0) {
        throw InputError("patch embedding: resolution " + std::to_string(x.height) + "x" + std::to_string(x.width) +
                         " is not divisible by patch size " + std::to_string(p));
    }
    const std::size_t c = x.channels();
    if (c * p * p != proj.in_features()) {
        throw DimensionError("patch embedding: expected " + std::to_string(proj.in_features() / (p * p)) +
                             " input channels, got " + std::to_string(c));
    }
    const bool batched = x.tokens.ndim() == 3;
    const std::size_t batch = batched ? x.tokens.dim(0) : 1;
    const std::size_t gh = x.height / p;
    const std::size_t gw = x.width / p;

    // [B, H*W, c] -> [B, gh, p, gw, p, c] -> [B, gh, gw, p, p, c] -> [B, gh*gw, p*p*c]
    static constexpr std::size_t kGather[] = {0, 1, 3, 2, 4, 5};
    auto grid = reshape(x.tokens, {batch, gh, p, gw, p, c});
    auto patches = reshape(permute(grid, std::span(kGather)), {batch, gh * gw, p * p * c});
    auto out = norm.forward(proj.forward(patches));
    if (!batched) out = reshape(out, {gh * gw, proj.out_features()});
    return {out, gh, gw};
}

template <typename T>
void PatchEmbed<T>::collect(const std::string& prefix, ParamRegistry<T>& registry) const {
    proj.collect(prefix + ".proj", registry);
    norm.collect(prefix + ".norm", registry);
}

// ---------------------------------------------------------------------------

template <typename T>
SemanticTransition<T>::SemanticTransition(std::size_t in_dim, std::size_t out_dim, Rng& rng)
    : proj(in_dim, out_dim, rng), norm(out_dim) {}

template <typename T>
SemanticTokens<T> SemanticTransition<T>::forward(const SemanticTokens<T>& z) const {
    require_tokens(z.tokens, proj.in_features(), "semantic transition");
    return {norm.forward(proj.forward(z.tokens))};
}

template <typename T>
void SemanticTransition<T>::collect(const std::string& prefix, ParamRegistry<T>& registry) const {
    proj.collect(prefix + ".proj", registry);
    norm.collect(prefix + ".norm", registry);
}

template struct FeatureMap<float>;
template struct FeatureMap<double>;
template class TransformerBlock<float>;
template class TransformerBlock<double>;
template class DualBlock<float>;
template class DualBlock<double>;
template class MergeBlock<float>;
template class MergeBlock<double>;
template class PatchEmbed<float>;
template class PatchEmbed<double>;
template class SemanticTransition<float>;
template class SemanticTransition<double>;

}  // namespace dualvit

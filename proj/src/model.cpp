#include "dualvit/model.hpp"

#include <algorithm>
#include <tuple>

namespace dualvit {

namespace {

StageSpec stage(std::size_t depth, std::size_t heads, std::size_t channels, std::size_t ex, std::size_t ez,
                std::size_t patch, BlockKind kind) {
    return {depth, heads, channels, ex, ez, patch, kind};
}

}  // namespace

const char* block_kind_name(BlockKind k) { return k == BlockKind::Dual ? "Dual" : "Merge"; }

std::string stage_prefix(std::size_t stage) { return "stage" + std::to_string(stage + 1); }

std::string block_prefix(std::size_t stage, std::size_t index) {
    return stage_prefix(stage) + ".block" + std::to_string(index);
}

std::size_t ModelConfig::stride() const {
    std::size_t s = 1;
    for (const auto& st : stages) s *= st.patch;
    return s;
}

std::size_t ModelConfig::grid_at(std::size_t stage_index, std::size_t res) const {
    std::size_t s = 1;
    for (std::size_t i = 0; i <= stage_index; ++i) s *= stages[i].patch;
    return res / s;
}

void ModelConfig::validate() const {
    for (std::size_t i = 0; i < kNumStages; ++i) {
        const auto& s = stages[i];
        const std::string where = "stage " + std::to_string(i + 1) + ": ";
        if (s.depth == 0 || s.heads == 0 || s.channels == 0 || s.patch == 0 || s.ratio_pixel == 0 ||
            s.ratio_semantic == 0) {
            throw ConfigError(where + "depth, heads, channels, ratios and patch must be positive");
        }
        if (s.channels % s.heads != 0) {
            throw ConfigError(where + "channels " + std::to_string(s.channels) + " not divisible by heads " +
                              std::to_string(s.heads));
        }
        const BlockKind expected = i < 2 ? BlockKind::Dual : BlockKind::Merge;
        if (s.kind != expected) {
            throw ConfigError(where + "must use " + block_kind_name(expected) + " blocks");
        }
    }
    if (semantic_tokens == 0) throw ConfigError("semantic token count m must be >= 1");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (resolution == 0 || resolution % stride() != 0) {
        throw ConfigError("resolution " + std::to_string(resolution) + " is not divisible by the total stride " +
                          std::to_string(stride()));
    }
    for (std::size_t i = 0; i < 2; ++i) {
        const std::size_t n = grid_at(i) * grid_at(i);
        if (semantic_tokens > n) {
            throw ConfigError("m=" + std::to_string(semantic_tokens) + " exceeds the " + std::to_string(n) +
                              " pixel tokens of stage " + std::to_string(i + 1));
        }
    }
}

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names{"S", "B", "L", "tiny"};
    return names;
}

ModelConfig preset_config(const std::string& name) {
    ModelConfig c;
    c.name = name;
    constexpr auto D = BlockKind::Dual;
    constexpr auto M = BlockKind::Merge;
    if (name == "S") {
        c.stages = {stage(3, 2, 64, 8, 4, 4, D), stage(4, 4, 128, 8, 4, 2, D), stage(6, 10, 320, 4, 2, 2, M),
                    stage(3, 14, 448, 3, 2, 2, M)};
    } else if (name == "B") {
        c.stages = {stage(3, 2, 64, 8, 4, 4, D), stage(4, 4, 128, 8, 4, 2, D), stage(15, 10, 320, 4, 2, 2, M),
                    stage(3, 16, 512, 3, 2, 2, M)};
    } else if (name == "L") {
        c.stages = {stage(3, 3, 96, 8, 4, 4, D), stage(6, 6, 192, 8, 4, 2, D), stage(21, 12, 384, 4, 2, 2, M),
                    stage(3, 16, 512, 3, 2, 2, M)};
    } else if (name == "tiny") {
        // depths 1/1/1/1, ratios taken from S
        c.stages = {stage(1, 2, 16, 8, 4, 4, D), stage(1, 2, 32, 8, 4, 2, D), stage(1, 4, 48, 4, 2, 2, M),
                    stage(1, 4, 64, 3, 2, 2, M)};
        c.semantic_tokens = 4;
        c.resolution = 32;
        c.num_classes = 8;
    } else {
        std::string list;
        for (const auto& n : preset_names()) list += (list.empty() ? "" : ", ") + n;
        throw ConfigError("unknown preset '" + name + "' (available: " + list + ")");
    }
    return c;
}

template <typename T>
Model<T>::Model(const ModelConfig& config, AblationVariant variant) : config_(config), variant_(variant) {
    config_.validate();
    Rng rng(config_.seed);
    const auto& st = config_.stages;
    const std::size_t m = config_.semantic_tokens;

    for (std::size_t i = 0; i < kNumStages; ++i) {
        const std::string sp = stage_prefix(i);
        const std::size_t in_ch = i == 0 ? 3 : st[i - 1].channels;
        patch_embeds[i] = PatchEmbed<T>(in_ch, st[i].channels, st[i].patch, rng);
        patch_embeds[i].collect(sp + ".patch_embed", registry_);
        if (i == 0) {
            if (config_.pos_embed) {
                const std::size_t g = config_.grid_at(0);
                pos_embed = trunc_normal_tensor<T>({g * g, st[0].channels}, rng);
                registry_.add("pos_embed", pos_embed);
            }
            semantic_queries = trunc_normal_tensor<T>({m, st[0].channels}, rng);
            registry_.add("semantic_queries", semantic_queries);
        } else {
            transitions[i - 1] = SemanticTransition<T>(st[i - 1].channels, st[i].channels, rng);
            transitions[i - 1].collect(sp + ".semantic_transition", registry_);
        }
        for (std::size_t b = 0; b < st[i].depth; ++b) {
            if (i < 2) {
                dual_stages[i].emplace_back(st[i].channels, st[i].heads, st[i].ratio_pixel, st[i].ratio_semantic, rng,
                                            variant_);
                dual_stages[i].back().collect(block_prefix(i, b), registry_);
            } else {
                merge_stages[i - 2].emplace_back(st[i].channels, st[i].heads, st[i].ratio_pixel,
                                                 st[i].ratio_semantic, rng);
                merge_stages[i - 2].back().collect(block_prefix(i, b), registry_);
            }
        }
    }
    head_norm = LayerNorm<T>(st[3].channels);
    head_norm.collect("head.norm", registry_);
    classifier = Linear<T>(st[3].channels, config_.num_classes, rng);
    classifier.collect("head.classifier", registry_);
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& images, std::vector<StageTrace>* trace) const {
    const std::size_t r = config_.resolution;
    if (images.ndim() != 4 || images.dim(3) != 3) {
        throw InputError("model: images must be [B, H, W, 3], got " + shape_str(images.shape()));
    }
    if (images.dim(1) != r || images.dim(2) != r) {
        throw InputError("model: expected " + std::to_string(r) + "x" + std::to_string(r) + " images, got " +
                         std::to_string(images.dim(1)) + "x" + std::to_string(images.dim(2)));
    }
    const std::size_t batch = images.dim(0);
    if (trace) trace->clear();

    FeatureMap<T> x{reshape(images, {batch, r * r, 3}), r, r};
    SemanticTokens<T> z;
    for (std::size_t i = 0; i < kNumStages; ++i) {
        x = patch_embeds[i].forward(x);
        if (i == 0) {
            if (pos_embed.defined()) x.tokens = add(x.tokens, pos_embed);
            z.tokens = expand_leading(semantic_queries, batch);
        } else {
            z = transitions[i - 1].forward(z);
        }
        if (i < 2) {
            for (const auto& blk : dual_stages[i]) std::tie(x, z) = blk.forward(x, z);
        } else {
            for (const auto& blk : merge_stages[i - 2]) std::tie(x, z) = blk.forward(x, z);
        }
        if (trace) trace->push_back({x.height, x.width, x.channels(), z.count()});
    }
    auto pooled = mean(concat<T>({x.tokens, z.tokens}, 1), 1);  // [B, C_4]
    return classifier.forward(head_norm.forward(pooled));
}

template class Model<float>;
template class Model<double>;

}  // namespace dualvit

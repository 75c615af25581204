#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dualvit/blocks.hpp"

namespace dualvit {

enum class BlockKind { Dual, Merge };

const char* block_kind_name(BlockKind k);

struct StageSpec {
    std::size_t depth = 1;
    std::size_t heads = 1;
    std::size_t channels = 1;
    std::size_t ratio_pixel = 4;     // E^x
    std::size_t ratio_semantic = 2;  // E^z
    std::size_t patch = 2;
    BlockKind kind = BlockKind::Dual;

    bool operator==(const StageSpec&) const = default;
};

inline constexpr std::size_t kNumStages = 4;

struct ModelConfig {
    std::string name = "custom";
    std::array<StageSpec, kNumStages> stages{};
    std::size_t semantic_tokens = 64;  // m
    std::size_t num_classes = 1000;
    std::size_t resolution = 224;
    bool pos_embed = true;
    std::uint64_t seed = 0;

    // Throws ConfigError on the first violated constraint.
    void validate() const;

    std::size_t stride() const;  // product of patch sizes, 32 for the presets
    std::size_t grid_at(std::size_t stage) const { return grid_at(stage, resolution); }
    std::size_t grid_at(std::size_t stage, std::size_t res) const;

    bool operator==(const ModelConfig&) const = default;
};

// "S", "B", "L" (the three published sizes) and "tiny" (desk-scale tests).
ModelConfig preset_config(const std::string& name);
const std::vector<std::string>& preset_names();

struct StageTrace {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::size_t semantic_tokens = 0;
};

// Image classifier. Images are channel-last [B, H, W, 3] with H == W ==
// config.resolution. Parameters are created in registration order from one
// Rng seeded with config.seed.
template <typename T>
class Model {
public:
    explicit Model(const ModelConfig& config, AblationVariant variant = AblationVariant::D);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    Tensor<T> forward(const Tensor<T>& images, std::vector<StageTrace>* trace = nullptr) const;

    const ModelConfig& config() const { return config_; }
    AblationVariant variant() const { return variant_; }
    ParamRegistry<T>& parameters() { return registry_; }
    const ParamRegistry<T>& parameters() const { return registry_; }

    std::array<PatchEmbed<T>, kNumStages> patch_embeds;
    Tensor<T> pos_embed;         // [n_1, C_1]; undefined when disabled
    Tensor<T> semantic_queries;  // z_0, [m, C_1]
    std::array<SemanticTransition<T>, kNumStages - 1> transitions;  // into stages 2..4
    std::array<std::vector<DualBlock<T>>, 2> dual_stages;
    std::array<std::vector<MergeBlock<T>>, 2> merge_stages;
    LayerNorm<T> head_norm;
    Linear<T> classifier;

private:
    ModelConfig config_;
    AblationVariant variant_;
    ParamRegistry<T> registry_;
};

// Registry path prefixes shared by the model and the cost counters.
std::string stage_prefix(std::size_t stage);  // "stage1".."stage4"
std::string block_prefix(std::size_t stage, std::size_t index);

}  // namespace dualvit

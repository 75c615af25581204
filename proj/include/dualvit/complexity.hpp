#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dualvit/model.hpp"

namespace dualvit {

// MAC convention: a linear layer on n tokens costs n * d_in * d_out; attention
// costs n_q * n_kv * d for the scores and the same again for mixing values.
// LayerNorm, GELU, softmax, residual adds and pooling are not counted.
// "GFLOPs" in reports means giga-MACs under this convention.

struct CostEntry {
    std::string path;  // registry prefix, e.g. "stage1.block0"
    std::uint64_t params = 0;
    std::uint64_t macs = 0;
};

struct CostReport {
    std::uint64_t params = 0;
    std::uint64_t macs = 0;
    std::vector<CostEntry> breakdown;

    void add(CostEntry entry);
};

struct BlockCost {
    std::uint64_t params = 0;
    std::uint64_t macs = 0;            // everything, per image
    std::uint64_t attention_macs = 0;  // score + mix only
};

std::uint64_t linear_params(std::uint64_t d_in, std::uint64_t d_out, bool bias = true);
std::uint64_t attention_params(std::uint64_t d);
std::uint64_t ffn_params(std::uint64_t d, std::uint64_t ratio);

BlockCost transformer_block_cost(std::uint64_t d, std::uint64_t ratio, std::uint64_t n);
BlockCost dual_block_cost(std::uint64_t d, std::uint64_t ratio_pixel, std::uint64_t ratio_semantic, std::uint64_t n,
                          std::uint64_t m, AblationVariant variant = AblationVariant::D);
BlockCost merge_block_cost(std::uint64_t d, std::uint64_t ratio_pixel, std::uint64_t ratio_semantic, std::uint64_t n,
                           std::uint64_t m);

// Parameters and per-image MACs of a whole network at `resolution`. Parameter
// counts do not depend on the resolution except through the positional
// embedding, which is sized for config.resolution. Throws InputError if the
// resolution does not fit the stride or the semantic token count.
CostReport count_costs(const ModelConfig& config, AblationVariant variant, std::size_t resolution);
inline CostReport count_costs(const ModelConfig& config, AblationVariant variant = AblationVariant::D) {
    return count_costs(config, variant, config.resolution);
}

template <typename T>
CostReport count_params(const Model<T>& model) {
    return count_costs(model.config(), model.variant());
}

template <typename T>
CostReport count_macs(const Model<T>& model, std::size_t resolution) {
    return count_costs(model.config(), model.variant(), resolution);
}

// Sums registry entries into the breakdown paths of `analytic` (entry name
// equal to the path or starting with "path."). Entries that match no path
// land under "<unattributed>".
template <typename T>
CostReport registry_params(const ParamRegistry<T>& registry, const CostReport& analytic);

// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace dualvit

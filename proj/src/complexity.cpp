#include "dualvit/complexity.hpp"

#include <cmath>

namespace dualvit {

namespace {

using u64 = std::uint64_t;

u64 ln_params(u64 d) { return 2 * d; }

// projections plus score and mix
u64 attention_macs_full(u64 d, u64 nq, u64 nkv) { return 2 * nq * d * d + 2 * nkv * d * d + 2 * nq * nkv * d; }
u64 attention_core(u64 d, u64 nq, u64 nkv) { return 2 * nq * nkv * d; }
u64 ffn_macs(u64 d, u64 ratio, u64 n) { return 2 * n * d * d * ratio; }

}  // namespace

void CostReport::add(CostEntry entry) {
    params += entry.params;
    macs += entry.macs;
    breakdown.push_back(std::move(entry));
}

u64 linear_params(u64 d_in, u64 d_out, bool bias) { return d_in * d_out + (bias ? d_out : 0); }

// q, v, o with bias; k without
u64 attention_params(u64 d) { return 4 * d * d + 3 * d; }

u64 ffn_params(u64 d, u64 ratio) { return linear_params(d, d * ratio) + linear_params(d * ratio, d); }

BlockCost transformer_block_cost(u64 d, u64 ratio, u64 n) {
    BlockCost c;
    c.params = 2 * ln_params(d) + attention_params(d) + ffn_params(d, ratio);
    c.attention_macs = attention_core(d, n, n);
    c.macs = attention_macs_full(d, n, n) + ffn_macs(d, ratio, n);
    return c;
}

BlockCost dual_block_cost(u64 d, u64 ratio_pixel, u64 ratio_semantic, u64 n, u64 m, AblationVariant variant) {
    const bool self = variant != AblationVariant::A;
    const bool sem_ffn = variant != AblationVariant::B;
    BlockCost c;
    // norm_x, sem_norm_mid, pix_norm_kv, pix_norm_ffn always; sem_norm_in with self-attn; sem_norm_ffn with FFN
    const u64 norms = 4 + (self ? 1 : 0) + (sem_ffn ? 1 : 0);
    c.params = norms * ln_params(d) + 2 * attention_params(d) + ffn_params(d, ratio_pixel);
    if (self) c.params += attention_params(d);
    if (sem_ffn) c.params += ffn_params(d, ratio_semantic);

    c.attention_macs = attention_core(d, m, n) + attention_core(d, n, m);
    c.macs = attention_macs_full(d, m, n) + attention_macs_full(d, n, m) + ffn_macs(d, ratio_pixel, n);
    if (self) {
        c.attention_macs += attention_core(d, m, m);
        c.macs += attention_macs_full(d, m, m);
    }
    if (sem_ffn) c.macs += ffn_macs(d, ratio_semantic, m);
    return c;
}

BlockCost merge_block_cost(u64 d, u64 ratio_pixel, u64 ratio_semantic, u64 n, u64 m) {
    BlockCost c;
    c.params = 3 * ln_params(d) + attention_params(d) + ffn_params(d, ratio_pixel) + ffn_params(d, ratio_semantic);
    c.attention_macs = attention_core(d, n + m, n + m);
    c.macs = attention_macs_full(d, n + m, n + m) + ffn_macs(d, ratio_pixel, n) + ffn_macs(d, ratio_semantic, m);
    return c;
}

CostReport count_costs(const ModelConfig& config, AblationVariant variant, std::size_t resolution) {
    config.validate();
    if (resolution == 0 || resolution % config.stride() != 0) {
        throw InputError("resolution " + std::to_string(resolution) + " is not divisible by the total stride " +
                         std::to_string(config.stride()));
    }
    const u64 m = config.semantic_tokens;
    for (std::size_t i = 0; i < 2; ++i) {
        const u64 g = config.grid_at(i, resolution);
        if (m > g * g) {
            throw InputError("resolution " + std::to_string(resolution) + " leaves " + std::to_string(g * g) +
                             " pixel tokens in stage " + std::to_string(i + 1) + ", fewer than m=" +
                             std::to_string(m));
        }
    }

    CostReport report;
    const auto& st = config.stages;
    for (std::size_t i = 0; i < kNumStages; ++i) {
        const u64 d = st[i].channels;
        const u64 in_ch = i == 0 ? 3 : st[i - 1].channels;
        const u64 g = config.grid_at(i, resolution);
        const u64 n = g * g;
        const u64 patch_in = in_ch * st[i].patch * st[i].patch;
        report.add({stage_prefix(i) + ".patch_embed", linear_params(patch_in, d) + ln_params(d), n * patch_in * d});
        if (i == 0) {
            if (config.pos_embed) {
                const u64 g0 = config.grid_at(0);
                report.add({"pos_embed", g0 * g0 * d, 0});
            }
            report.add({"semantic_queries", m * d, 0});
        } else {
            const u64 prev = st[i - 1].channels;
            report.add({stage_prefix(i) + ".semantic_transition", linear_params(prev, d) + ln_params(d), m * prev * d});
        }
        for (std::size_t b = 0; b < st[i].depth; ++b) {
            const BlockCost c = i < 2 ? dual_block_cost(d, st[i].ratio_pixel, st[i].ratio_semantic, n, m, variant)
                                      : merge_block_cost(d, st[i].ratio_pixel, st[i].ratio_semantic, n, m);
            report.add({block_prefix(i, b), c.params, c.macs});
        }
    }
    const u64 c4 = st[3].channels;
    report.add({"head.norm", ln_params(c4), 0});
    report.add({"head.classifier", linear_params(c4, config.num_classes), c4 * config.num_classes});
    return report;
}

template <typename T>
CostReport registry_params(const ParamRegistry<T>& registry, const CostReport& analytic) {
    CostReport out;
    std::vector<u64> sums(analytic.breakdown.size(), 0);
    u64 stray = 0;
    for (const auto& e : registry) {
        bool placed = false;
        for (std::size_t i = 0; i < analytic.breakdown.size() && !placed; ++i) {
            const std::string& p = analytic.breakdown[i].path;
            if (e.name == p || (e.name.size() > p.size() && e.name.compare(0, p.size(), p) == 0 && e.name[p.size()] == '.')) {
                sums[i] += e.tensor.numel();
                placed = true;
            }
        }
        if (!placed) stray += e.tensor.numel();
    }
    for (std::size_t i = 0; i < sums.size(); ++i) out.add({analytic.breakdown[i].path, sums[i], 0});
    if (stray) out.add({"<unattributed>", stray, 0});
    return out;
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw ContractError("loglog_slope: need two or more paired points");
    double mx = 0;
    double my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= x.size();
    my /= y.size();
    double sxy = 0;
    double sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

template CostReport registry_params<float>(const ParamRegistry<float>&, const CostReport&);
template CostReport registry_params<double>(const ParamRegistry<double>&, const CostReport&);

}  // namespace dualvit

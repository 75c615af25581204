// Acceptance gate: one PASS/FAIL line per criterion, exit 1 if any fails.
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "dualvit/checkpoint.hpp"
#include "dualvit/cli.hpp"
#include "dualvit/complexity.hpp"
#include "dualvit/ops.hpp"
#include "dualvit/training.hpp"
#include "oracles.hpp"

using namespace dualvit;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
        }
    }
    void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string num(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

json cli_json(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    if (code != kExitOk) throw std::runtime_error("dualvit " + args[0] + " exited " + std::to_string(code) + ": " + err.str());
    return json::parse(out.str());
}

template <typename T>
std::vector<T> values(const Tensor<T>& t) {
    return {t.data().begin(), t.data().end()};
}

template <typename T>
double max_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) return INFINITY;
    double worst = 0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
    return worst;
}

template <typename Module>
void copy_module(const Module& src, Module& dst) {
    auto a = oracle::params_of(src);
    auto b = oracle::params_of(dst);
    for (std::size_t i = 0; i < a.size(); ++i) std::ranges::copy(a[i].data(), b[i].mutable_data().begin());
}

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& gen) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<T> v(shape_numel(shape));
    for (T& x : v) x = static_cast<T>(dist(gen));
    return Tensor<T>(std::move(shape), std::move(v));
}

// ---- 1
Outcome architecture() {
    struct Row {
        std::size_t depth, heads, channels, ex, ez, patch;
    };
    // depth, heads, channels, E^x, E^z, patch per stage, transcribed from the published table
    const std::map<std::string, std::array<Row, 4>> table{
        {"S", {{{3, 2, 64, 8, 4, 4}, {4, 4, 128, 8, 4, 2}, {6, 10, 320, 4, 2, 2}, {3, 14, 448, 3, 2, 2}}}},
        {"B", {{{3, 2, 64, 8, 4, 4}, {4, 4, 128, 8, 4, 2}, {15, 10, 320, 4, 2, 2}, {3, 16, 512, 3, 2, 2}}}},
        {"L", {{{3, 3, 96, 8, 4, 4}, {6, 6, 192, 8, 4, 2}, {21, 12, 384, 4, 2, 2}, {3, 16, 512, 3, 2, 2}}}},
    };
    const char* kinds[4] = {"Dual", "Dual", "Merge", "Merge"};
    Outcome o;
    std::size_t cells = 0;
    for (const auto& [name, rows] : table) {
        const auto j = cli_json({"describe", "--preset", name, "--json"});
        for (std::size_t s = 0; s < 4; ++s) {
            const auto& st = j["stages"][s];
            const auto& r = rows[s];
            const std::string at = name + " stage " + std::to_string(s + 1);
            o.require(st["depth"] == r.depth, at + " depth");
            o.require(st["heads"] == r.heads, at + " heads");
            o.require(st["channels"] == r.channels, at + " channels");
            o.require(st["ratio_pixel"] == r.ex, at + " E^x");
            o.require(st["ratio_semantic"] == r.ez, at + " E^z");
            o.require(st["patch"] == r.patch, at + " patch");
            o.require(st["kind"] == kinds[s], at + " block kind");
            cells += 7;
        }
    }
    o.note(std::to_string(cells) + " cells checked for S/B/L");
    return o;
}

// ---- 2
Outcome param_counts() {
    const std::map<std::string, double> published{{"S", 24.6e6}, {"B", 42.6e6}, {"L", 73.0e6}};
    Outcome o;
    for (const auto& [name, target] : published) {
        const auto j = cli_json({"count", "--preset", name, "--json"});
        const double p = j["params"].get<double>();
        const double rel = p / target - 1.0;
        o.require(std::abs(rel) <= 0.10, name + " params within 10%");
        if (name == "S") {
            // independent of the analytic counter: sum of the built model's tensors
            Model<float> model(preset_config(name));
            o.require(model.parameters().total_numel() == j["params"].get<std::uint64_t>(), "S registry sum");
            o.note("S registry sum matches");
        }
        o.note(name + " " + num("%.2fM", p / 1e6) + " (" + num("%+.1f%%", 100 * rel) + ")");
    }
    return o;
}

// ---- 3
Outcome mac_counts() {
    Outcome o;
    const auto j = cli_json({"count", "--preset", "S", "--res", "224", "--json"});
    const double g = j["giga_macs"];
    o.require(std::abs(g / 4.8 - 1.0) <= 0.15, "S at 224 within 15% of 4.8 G");
    o.note("S@224 " + num("%.3f", g) + " GMACs (" + num("%+.1f%%", 100 * (g / 4.8 - 1)) + ")");
    // counter agrees with an instrumented forward of S at a smaller input
    auto cfg = preset_config("S");
    cfg.resolution = 64;
    Model<float> small(cfg);
    std::mt19937_64 gen(1);
    MacTally tally;
    {
        NoGradGuard guard;
        small.forward(random_tensor<float>({1, 64, 64, 3}, gen));
    }
    const auto analytic = count_costs(cfg, AblationVariant::D, 64).macs;
    o.require(tally.macs() == analytic, "instrumented S@64 forward equals counter");
    o.note("S@64 instrumented " + std::to_string(tally.macs()) + " = counter");
    return o;
}

// ---- 4
Outcome ablation() {
    Outcome o;
    const auto j = cli_json({"ablate", "--preset", "S", "--json"});
    std::map<std::string, std::int64_t> p;
    for (const auto& row : j["variants"]) p[row["variant"].get<std::string>()] = row["params"].get<std::int64_t>();
    o.require(p["B"] < p["A"], "B < A");
    o.require(p["A"] < p["C"], "A < C");
    o.require(p["C"] == p["D"], "C = D");
    const double da = static_cast<double>(p["D"] - p["A"]);
    const double db = static_cast<double>(p["D"] - p["B"]);
    o.require(std::abs(da / 0.3e6 - 1) <= 0.30, "D-A within 30% of 0.3M");
    o.require(std::abs(db / 0.7e6 - 1) <= 0.30, "D-B within 30% of 0.7M");
    o.note("D-A " + num("%.1fk", da / 1e3) + ", D-B " + num("%.1fk", db / 1e3));
    return o;
}

// ---- 5
Outcome scaling() {
    Outcome o;
    const std::vector<double> ns{256, 1024, 4096};
    std::vector<double> dual, tr, dual_total, tr_total;
    for (double n : ns) {
        const auto k = static_cast<std::uint64_t>(n);
        dual.push_back(static_cast<double>(dual_block_cost(64, 8, 4, k, 64).attention_macs));
        tr.push_back(static_cast<double>(transformer_block_cost(64, 8, k).attention_macs));
        dual_total.push_back(static_cast<double>(dual_block_cost(16, 4, 4, k, 64).macs));
        tr_total.push_back(static_cast<double>(transformer_block_cost(16, 4, k).macs));
    }
    const double sd = loglog_slope(ns, dual), st = loglog_slope(ns, tr);
    const double sdt = loglog_slope(ns, dual_total), stt = loglog_slope(ns, tr_total);
    o.require(sd >= 0.9 && sd <= 1.2, "dual attention slope in [0.9, 1.2]");
    o.require(st >= 1.8 && st <= 2.1, "transformer attention slope in [1.8, 2.1]");
    o.require(sdt >= 0.9 && sdt <= 1.2, "dual total slope in [0.9, 1.2]");
    o.require(stt >= 1.8 && stt <= 2.1, "transformer total slope in [1.8, 2.1]");
    o.note("attention slopes dual " + num("%.3f", sd) + " transformer " + num("%.3f", st) + " (d=64, m=64)");
    o.note("total slopes dual " + num("%.3f", sdt) + " transformer " + num("%.3f", stt) + " (d=16)");
    return o;
}

// ---- 6
Outcome gradients() {
    Outcome o;
    for (const auto& target : gradcheck_targets()) {
        const auto r = gradcheck_target(target, {});
        o.require(r.passed() && r.max_rel_error < 1e-4, target + " max rel error < 1e-4");
        o.note(target + " " + num("%.1e", r.max_rel_error));
    }
    Model<double> model(preset_config("tiny"));
    const auto data = make_synthetic(8, 1, 32, 3);
    std::vector<int> labels;
    std::vector<std::size_t> idx(8);
    std::iota(idx.begin(), idx.end(), 0);
    const auto imgs = data.gather(idx, &labels);
    Tensor<double> x(imgs.shape(), std::vector<double>(imgs.data().begin(), imgs.data().end()));
    backward(cross_entropy_with_logits(model.forward(x), std::span<const int>(labels)));
    std::size_t zero = 0, sem = 0, pix = 0;
    for (const auto& e : model.parameters()) {
        double n2 = 0;
        if (e.tensor.has_grad())
            for (double g : e.tensor.grad()) n2 += g * g;
        if (n2 == 0) ++zero;
        if (n2 > 0 && e.name.find(".sem.") != std::string::npos) ++sem;
        if (n2 > 0 && e.name.find(".pix.") != std::string::npos) ++pix;
        if (e.name == "semantic_queries") o.require(n2 > 0, "z0 gradient nonzero");
    }
    o.require(zero == 0, "every parameter receives gradient");
    o.require(sem > 0 && pix > 0, "both pathways receive gradient");
    o.note("z0, " + std::to_string(sem) + " semantic and " + std::to_string(pix) + " pixel tensors nonzero");
    return o;
}

// ---- 7
Outcome equivalences() {
    Outcome o;
    std::mt19937_64 gen(21);
    {
        Rng rng(22);
        MergeBlock<double> mb(32, 4, 4, 4, rng);
        oracle::randomize(mb, gen, 0.2);
        copy_module(mb.ffn_x, mb.ffn_z);
        copy_module(mb.norm_ffn_x, mb.norm_ffn_z);
        TransformerBlock<double> tb(32, 4, 4, rng);
        copy_module(mb.norm_joint, tb.norm_attn);
        copy_module(mb.attn, tb.attn);
        copy_module(mb.norm_ffn_x, tb.norm_ffn);
        copy_module(mb.ffn_x, tb.ffn);
        auto x = random_tensor<double>({2, 16, 32}, gen);
        auto z = random_tensor<double>({2, 4, 32}, gen);
        auto [xo, zo] = mb.forward({x, 4, 4}, {z});
        const double d = max_diff(concat<double>({xo.tokens, zo.tokens}, 1), tb.forward_tokens(concat<double>({x, z}, 1)));
        o.require(d <= 1e-6, "tied merge equals transformer on concatenation");
        o.note("merge vs transformer " + num("%.1e", d));
    }
    {
        Rng rng(23);
        DualBlock<float> db(32, 4, 4, 2, rng);
        oracle::randomize<float>(db, gen, 0.2);
        auto x = random_tensor<float>({2, 64, 32}, gen);
        auto z = random_tensor<float>({2, 8, 32}, gen);
        std::vector<std::size_t> px(64), pz(8);
        std::iota(px.begin(), px.end(), 0);
        std::iota(pz.begin(), pz.end(), 0);
        std::shuffle(px.begin(), px.end(), gen);
        std::shuffle(pz.begin(), pz.end(), gen);
        auto [xa, za] = db.forward({x, 8, 8}, {z});
        auto [xb, zb] = db.forward({oracle::permute_rows(x, px), 8, 8}, {z});
        auto [xc, zc] = db.forward({x, 8, 8}, {oracle::permute_rows(z, pz)});
        const double inv = std::max(max_diff(za.tokens, zb.tokens), max_diff(xa.tokens, xc.tokens));
        const double eqv = std::max(max_diff(oracle::permute_rows(xa.tokens, px), xb.tokens),
                                    max_diff(oracle::permute_rows(za.tokens, pz), zc.tokens));
        o.require(inv <= 1e-5, "dual block invariance");
        o.require(eqv <= 1e-5, "dual block equivariance");
        o.note("dual invariance " + num("%.1e", inv) + " equivariance " + num("%.1e", eqv));
    }
    {
        // whole network without positional embedding: reordering z0 leaves logits unchanged
        auto cfg = preset_config("tiny");
        cfg.pos_embed = false;
        Model<float> model(cfg);
        const auto imgs = make_synthetic(8, 1, 32, 5).images;
        const auto before = model.forward(imgs);
        auto& q = model.semantic_queries;
        std::vector<std::size_t> perm(q.dim(0));
        std::iota(perm.begin(), perm.end(), 0);
        std::ranges::reverse(perm);
        const auto shuffled = oracle::permute_rows(q, perm);
        std::ranges::copy(shuffled.data(), q.mutable_data().begin());
        const double d = max_diff(before, model.forward(imgs));
        o.require(d <= 1e-5, "model logits invariant to semantic query order");
        o.note("model z0 reorder " + num("%.1e", d));
    }
    {
        const auto cfg = preset_config("tiny");
        Model<float> plain(cfg);
        Model<float> d(cfg, AblationVariant::D);
        const auto imgs = make_synthetic(8, 1, 32, 6).images;
        bool same = plain.parameters().size() == d.parameters().size();
        for (std::size_t i = 0; same && i < d.parameters().size(); ++i)
            same = plain.parameters()[i].name == d.parameters()[i].name &&
                   values(plain.parameters()[i].tensor) == values(d.parameters()[i].tensor);
        same = same && values(plain.forward(imgs)) == values(d.forward(imgs));
        o.require(same, "variant D bit-identical to the default model");
        o.note("variant D bit-identical");
    }
    return o;
}

// ---- 8
Outcome learning() {
    Outcome o;
    const auto data = make_synthetic(8, 8, 32, 0);
    std::vector<TrainReport> reports;
    std::vector<std::vector<float>> finals;
    for (int run = 0; run < 2; ++run) {
        Model<float> model(preset_config("tiny"));
        TrainOptions opts;  // 500 steps, batch 16, lr 1e-3, wd 0.05
        reports.push_back(train_toy(model, data, opts));
        std::vector<float> all;
        for (const auto& e : model.parameters()) all.insert(all.end(), e.tensor.data().begin(), e.tensor.data().end());
        finals.push_back(std::move(all));
    }
    o.require(reports[0].final_accuracy >= 0.99, "train accuracy >= 99%");
    o.require(reports[0].losses == reports[1].losses && finals[0] == finals[1], "bitwise identical rerun");
    o.require(std::abs(reports[0].losses.front() - std::log(8.0)) <= 0.2, "first loss near ln 8");
    o.note("accuracy " + num("%.4f", reports[0].final_accuracy) + ", loss " + num("%.3f", reports[0].losses.front()) +
           " -> " + num("%.4f", reports[0].losses.back()) + ", rerun identical, " +
           num("%.1f s", reports[0].seconds) + " per run");
    return o;
}

// ---- 9
Outcome serialization() {
    Outcome o;
    const auto data = make_synthetic(8, 8, 32, 2);
    const auto bytes = encode_packed_dataset(data);
    const auto back = decode_packed_dataset(bytes);
    o.require(values(back.images) == values(data.images) && back.labels == data.labels, "DVDS values");
    o.require(encode_packed_dataset(back) == bytes, "DVDS re-encode");

    auto cfg = preset_config("tiny");
    cfg.seed = 4;
    Model<float> model(cfg, AblationVariant::C);
    TrainOptions opts;
    opts.steps = 3;  // move away from the seeded init
    train_toy(model, data, opts);
    const auto ck = encode_checkpoint(model);
    const auto loaded = decode_checkpoint(ck);
    bool same = loaded.parameters().size() == model.parameters().size() && loaded.variant() == model.variant() &&
                loaded.config() == model.config();
    for (std::size_t i = 0; same && i < model.parameters().size(); ++i)
        same = values(loaded.parameters()[i].tensor) == values(model.parameters()[i].tensor);
    o.require(same, "checkpoint parameters bit-exact");
    o.require(encode_checkpoint(loaded) == ck, "checkpoint re-encode");
    o.require(values(loaded.forward(data.images)) == values(model.forward(data.images)), "forward identical");
    o.note("DVDS " + std::to_string(bytes.size()) + " B and DVCP " + std::to_string(ck.size()) +
           " B round trips bit-exact, logits identical");
    return o;
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        double budget_s;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "architecture table", 1, architecture},
        {2, "parameter counts", 5, param_counts},
        {3, "MAC counts", 5, mac_counts},
        {4, "ablation bookkeeping", 10, ablation},
        {5, "complexity scaling", 5, scaling},
        {6, "gradient correctness", 120, gradients},
        {7, "structural equivalences", 30, equivalences},
        {8, "learning sanity", 300, learning},
        {9, "serialization", 10, serialization},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (secs > c.budget_s) o.require(false, "runtime " + num("%.1f s", secs) + " over " + num("%.0f s", c.budget_s));
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << c.id << "  " << c.name << "  [" << num("%.2f s", secs)
                  << "]  " << o.detail << std::endl;
    }
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
    return failed == 0 ? 0 : 1;
}

#include "dualvit/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>

#include "dualvit/checkpoint.hpp"
#include "dualvit/complexity.hpp"
#include "dualvit/config.hpp"
#include "dualvit/data.hpp"
#include "dualvit/training.hpp"

namespace dualvit {

namespace {

using nlohmann::json;

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string grouped(std::uint64_t v) {
    std::string s = std::to_string(v);
    for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
    return s;
}

// Left-aligned columns, two spaces apart.
class Table {
public:
    explicit Table(std::vector<std::string> header) { rows_.push_back(std::move(header)); }
    void row(std::vector<std::string> cells) { rows_.push_back(std::move(cells)); }
    void print(std::ostream& os) const {
        std::vector<std::size_t> w;
        for (const auto& r : rows_) {
            w.resize(std::max(w.size(), r.size()), 0);
            for (std::size_t c = 0; c < r.size(); ++c) w[c] = std::max(w[c], r[c].size());
        }
        for (const auto& r : rows_) {
            std::string line;
            for (std::size_t c = 0; c < r.size(); ++c) {
                line += r[c];
                if (c + 1 < r.size()) line += std::string(w[c] - r[c].size() + 2, ' ');
            }
            os << line << '\n';
        }
    }

private:
    std::vector<std::vector<std::string>> rows_;
};

struct ModelArgs {
    std::string preset;
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
};

void add_model_args(CLI::App* sub, ModelArgs& a) {
    auto* p = sub->add_option("--preset", a.preset, "S, B, L or tiny (default tiny)");
    auto* c = sub->add_option("--config", a.config_path, "model config JSON");
    p->excludes(c);
    sub->add_option("--seed", a.seed, "initialization seed (overrides the config)");
    sub->add_option("overrides", a.overrides, "key=value config overrides, e.g. m=16 stages.2.heads=8");
}

ModelConfig resolve(const ModelArgs& a) {
    ModelConfig c = a.config_path.empty() ? preset_config(a.preset.empty() ? "tiny" : a.preset)
                                          : load_config_file(a.config_path);
    c = apply_overrides(c, a.overrides);
    if (a.seed) c.seed = *a.seed;
    c.validate();
    return c;
}

struct DataArgs {
    std::string source = "synthetic";
    std::size_t per_class = 8;
    std::uint64_t seed = 0;
};

void add_data_args(CLI::App* sub, DataArgs& d) {
    sub->add_option("--data", d.source, "\"synthetic\" or a .dvds file")->capture_default_str();
    sub->add_option("--per-class", d.per_class, "synthetic samples per class")->capture_default_str();
    sub->add_option("--data-seed", d.seed, "synthetic data seed")->capture_default_str();
}

Dataset load_data(const DataArgs& d, const ModelConfig& c) {
    if (d.source == "synthetic") return make_synthetic(c.num_classes, d.per_class, c.resolution, d.seed);
    return load_packed_dataset(d.source);
}

// ---- describe

json describe_json(const ModelConfig& c) {
    json stages = json::array();
    for (std::size_t i = 0; i < kNumStages; ++i) {
        const auto& s = c.stages[i];
        const std::size_t g = c.grid_at(i);
        stages.push_back({{"stage", i + 1},
                          {"kind", block_kind_name(s.kind)},
                          {"depth", s.depth},
                          {"heads", s.heads},
                          {"channels", s.channels},
                          {"ratio_pixel", s.ratio_pixel},
                          {"ratio_semantic", s.ratio_semantic},
                          {"patch", s.patch},
                          {"grid", {g, g}},
                          {"tokens", g * g},
                          {"semantic_tokens", c.semantic_tokens}});
    }
    return {{"name", c.name},
            {"resolution", c.resolution},
            {"m", c.semantic_tokens},
            {"num_classes", c.num_classes},
            {"pos_embed", c.pos_embed},
            {"stages", stages}};
}

int cmd_describe(const ModelArgs& a, std::optional<std::size_t> res, bool as_json, std::ostream& out) {
    ModelConfig c = resolve(a);
    if (res) {
        c.resolution = *res;
        c.validate();
    }
    if (as_json) {
        out << describe_json(c).dump(2) << '\n';
        return kExitOk;
    }
    out << "model " << c.name << "  resolution " << c.resolution << "  m " << c.semantic_tokens << "  classes "
        << c.num_classes << "  pos_embed " << (c.pos_embed ? "on" : "off") << '\n';
    Table t({"stage", "block", "depth", "heads", "channels", "E^x", "E^z", "patch", "grid", "n", "m"});
    for (std::size_t i = 0; i < kNumStages; ++i) {
        const auto& s = c.stages[i];
        const std::size_t g = c.grid_at(i);
        t.row({std::to_string(i + 1), block_kind_name(s.kind), std::to_string(s.depth), std::to_string(s.heads),
               std::to_string(s.channels), std::to_string(s.ratio_pixel), std::to_string(s.ratio_semantic),
               std::to_string(s.patch), std::to_string(g) + "x" + std::to_string(g), std::to_string(g * g),
               std::to_string(c.semantic_tokens)});
    }
    t.print(out);
    return kExitOk;
}

// ---- count

int cmd_count(const ModelArgs& a, std::optional<std::size_t> res, const std::string& variant_text, bool as_json,
              std::ostream& out) {
    const ModelConfig c = resolve(a);
    const auto variant = parse_variant(variant_text);
    const std::size_t r = res.value_or(c.resolution);
    const auto report = count_costs(c, variant, r);
    if (as_json) {
        json rows = json::array();
        for (const auto& e : report.breakdown) rows.push_back({{"path", e.path}, {"params", e.params}, {"macs", e.macs}});
        out << json{{"name", c.name},
                    {"variant", std::string(1, variant_letter(variant))},
                    {"resolution", r},
                    {"params", report.params},
                    {"macs", report.macs},
                    {"giga_macs", static_cast<double>(report.macs) / 1e9},
                    {"breakdown", rows}}
                   .dump(2)
            << '\n';
        return kExitOk;
    }
    out << "model " << c.name << "  variant " << variant_letter(variant) << "  input " << r << "x" << r << '\n';
    out << "params  " << grouped(report.params) << "  (" << fmt("%.2f", report.params / 1e6) << " M)\n";
    out << "MACs    " << grouped(report.macs) << "  (" << fmt("%.3f", report.macs / 1e9) << " G)\n";
    out << "GFLOPs here means giga-MACs: one multiply-add counts once; norms, softmax, GELU and adds are excluded\n\n";
    Table t({"path", "params", "MACs (M)"});
    for (const auto& e : report.breakdown) t.row({e.path, grouped(e.params), fmt("%.2f", e.macs / 1e6)});
    t.print(out);
    return kExitOk;
}

// ---- gradcheck

int cmd_gradcheck(const std::string& block, const GradcheckOptions& opts, bool as_json, std::ostream& out) {
    std::vector<std::string> targets;
    if (block == "all") {
        targets = gradcheck_targets();
    } else {
        targets.push_back(block);
    }
    bool ok = true;
    json reports = json::array();
    for (const auto& name : targets) {
        const auto r = gradcheck_target(name, opts);
        ok = ok && r.passed();
        if (as_json) {
            json fails = json::array();
            for (const auto& f : r.failures) {
                fails.push_back({{"name", f.name},
                                 {"index", f.index},
                                 {"analytic", f.analytic},
                                 {"numeric", f.numeric},
                                 {"rel_error", f.rel_error}});
            }
            reports.push_back({{"target", r.target},
                               {"total_params", r.total_params},
                               {"checked", r.checked},
                               {"max_rel_error", r.max_rel_error},
                               {"tolerance", r.tolerance},
                               {"passed", r.passed()},
                               {"failures", fails}});
            continue;
        }
        out << std::left << std::setw(12) << r.target << " checked " << r.checked << " of " << r.total_params
            << "  max rel error " << fmt("%.3e", r.max_rel_error) << "  tol " << fmt("%.1e", r.tolerance) << "  "
            << (r.passed() ? "PASS" : "FAIL") << '\n';
        const std::size_t shown = std::min<std::size_t>(r.failures.size(), 10);
        for (std::size_t i = 0; i < shown; ++i) {
            const auto& f = r.failures[i];
            out << "    " << f.name << "[" << f.index << "] analytic " << fmt("%.6e", f.analytic) << " numeric "
                << fmt("%.6e", f.numeric) << " rel " << fmt("%.2e", f.rel_error) << '\n';
        }
        if (r.failures.size() > shown) out << "    ... " << r.failures.size() - shown << " more\n";
    }
    if (as_json) out << json{{"passed", ok}, {"targets", reports}}.dump(2) << '\n';
    return ok ? kExitOk : kExitCheckFailed;
}

// ---- train

struct TrainArgs {
    std::size_t steps = 500;
    std::size_t batch = 16;
    double lr = 1e-3;
    double wd = 0.05;
    std::string variant = "D";
    std::string out;
    std::string csv;
    std::size_t log_every = 50;
};

int cmd_train(const ModelArgs& a, const DataArgs& d, const TrainArgs& t, bool as_json, std::ostream& out,
              std::ostream& err) {
    const ModelConfig c = resolve(a);
    const auto data = load_data(d, c);
    Model<float> model(c, parse_variant(t.variant));

    std::unique_ptr<std::ofstream> csv;
    if (!t.csv.empty()) {
        csv = std::make_unique<std::ofstream>(t.csv);
        if (!*csv) throw InputError("cannot write " + t.csv);
        *csv << "step,loss,lr\n" << std::setprecision(9);
    }
    TrainOptions opts;
    opts.steps = t.steps;
    opts.batch_size = t.batch;
    opts.optimizer.lr = t.lr;
    opts.optimizer.weight_decay = t.wd;
    opts.seed = c.seed;
    if (!t.out.empty()) opts.last_good_checkpoint = t.out;
    opts.on_step = [&](std::size_t step, double loss, double lr) {
        if (csv) *csv << step << ',' << loss << ',' << lr << '\n';
        if (!as_json && t.log_every > 0 && (step % t.log_every == 0 || step + 1 == t.steps)) {
            out << "step " << std::setw(5) << step << "  loss " << fmt("%.5f", loss) << "  lr " << fmt("%.3e", lr)
                << '\n';
        }
    };
    TrainReport report;
    try {
        report = train_toy(model, data, opts);
    } catch (const NumericError& e) {
        err << "training diverged: " << e.what() << '\n';
        return kExitCheckFailed;
    }
    if (!t.out.empty()) save_checkpoint(model, t.out);
    if (as_json) {
        out << json{{"steps", report.losses.size()},
                    {"samples", data.size()},
                    {"first_loss", report.losses.empty() ? 0.0 : report.losses.front()},
                    {"final_loss", report.losses.empty() ? 0.0 : report.losses.back()},
                    {"train_accuracy", report.final_accuracy},
                    {"seconds", report.seconds},
                    {"checkpoint", t.out}}
                   .dump(2)
            << '\n';
    } else {
        out << "train accuracy " << fmt("%.4f", report.final_accuracy) << " on " << data.size() << " samples in "
            << fmt("%.1f", report.seconds) << " s\n";
        if (!t.out.empty()) out << "checkpoint written to " << t.out << '\n';
    }
    return kExitOk;
}

// ---- eval

int cmd_eval(const std::string& path, const DataArgs& d, std::size_t batch, bool as_json, std::ostream& out) {
    const auto model = load_checkpoint(path);
    const auto data = load_data(d, model.config());
    const double acc = evaluate(model, data, batch);
    if (as_json) {
        out << json{{"checkpoint", path}, {"data", d.source}, {"samples", data.size()}, {"accuracy", acc}}.dump(2)
            << '\n';
    } else {
        const auto correct = static_cast<std::size_t>(std::lround(acc * static_cast<double>(data.size())));
        out << "accuracy " << fmt("%.4f", acc) << " (" << correct << "/" << data.size() << ") on " << d.source
            << '\n';
    }
    return kExitOk;
}

// ---- ablate

const char* variant_blurb(AblationVariant v) {
    switch (v) {
        case AblationVariant::A: return "no semantic self-attention";
        case AblationVariant::B: return "no semantic feed-forward";
        case AblationVariant::C: return "cross-attention before self-attention";
        case AblationVariant::D: return "full dual block";
    }
    return "";
}

int cmd_ablate(const ModelArgs& a, std::optional<std::size_t> res, std::size_t train_steps, const DataArgs& d,
               std::size_t batch, bool as_json, std::ostream& out) {
    const ModelConfig c = resolve(a);
    const std::size_t r = res.value_or(c.resolution);
    const std::array variants{AblationVariant::A, AblationVariant::B, AblationVariant::C, AblationVariant::D};
    const auto full = count_costs(c, AblationVariant::D, r);
    std::optional<Dataset> data;
    if (train_steps > 0) data = load_data(d, c);

    json rows = json::array();
    Table t({"variant", "layout", "params", "vs D", "GMACs"});
    if (data) t = Table({"variant", "layout", "params", "vs D", "GMACs", "train acc"});
    for (auto v : variants) {
        const auto cost = count_costs(c, v, r);
        const auto delta = static_cast<std::int64_t>(cost.params) - static_cast<std::int64_t>(full.params);
        json row{{"variant", std::string(1, variant_letter(v))},
                 {"layout", variant_blurb(v)},
                 {"params", cost.params},
                 {"params_delta", delta},
                 {"macs", cost.macs}};
        std::vector<std::string> cells{std::string(1, variant_letter(v)), variant_blurb(v), grouped(cost.params),
                                       (delta > 0 ? "+" : "") + std::to_string(delta), fmt("%.4g", cost.macs / 1e9)};
        if (data) {
            Model<float> model(c, v);
            TrainOptions opts;
            opts.steps = train_steps;
            opts.batch_size = batch;
            opts.seed = c.seed;
            const auto rep = train_toy(model, *data, opts);
            row["train_accuracy"] = rep.final_accuracy;
            cells.push_back(fmt("%.4f", rep.final_accuracy));
        }
        rows.push_back(row);
        t.row(cells);
    }
    if (as_json) {
        out << json{{"name", c.name}, {"resolution", r}, {"train_steps", train_steps}, {"variants", rows}}.dump(2)
            << '\n';
    } else {
        out << "model " << c.name << "  input " << r << "x" << r
            << "  (variants replace every block of the first two stages)\n";
        t.print(out);
    }
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Dual vision transformer: describe, count, gradcheck, train, eval, ablate", "dualvit"};
    app.require_subcommand(1, 1);
    bool as_json = false;

    ModelArgs model_args;
    DataArgs data_args;
    std::optional<std::size_t> res;

    auto* describe = app.add_subcommand("describe", "print the stage table of a model");
    add_model_args(describe, model_args);
    describe->add_option("--res", res, "input resolution for the token counts");
    describe->add_flag("--json", as_json, "machine-readable output");

    std::string variant = "D";
    auto* count = app.add_subcommand("count", "parameters and MACs with a per-module breakdown");
    add_model_args(count, model_args);
    count->add_option("--res", res, "input resolution (default: the config's)");
    count->add_option("--variant", variant, "dual block variant A-D")->capture_default_str();
    count->add_flag("--json", as_json, "machine-readable output");

    std::string block = "all";
    GradcheckOptions gc;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check in double precision");
    gradcheck->add_option("--block", block, "dual, merge, transformer, model or all")
        ->check(CLI::IsMember({"dual", "merge", "transformer", "model", "all"}))
        ->capture_default_str();
    gradcheck->add_option("--tol", gc.tolerance, "max relative error")->capture_default_str();
    gradcheck->add_option("--samples", gc.samples, "coordinates checked per target")->capture_default_str();
    gradcheck->add_option("--step", gc.step, "central difference step")->capture_default_str();
    gradcheck->add_option("--seed", gc.seed, "sampling and input seed")->capture_default_str();
    gradcheck->add_flag("--json", as_json, "machine-readable output");

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "toy training with AdamW and cosine decay");
    add_model_args(train, model_args);
    add_data_args(train, data_args);
    train->add_option("--steps", train_args.steps)->capture_default_str();
    train->add_option("--batch", train_args.batch)->capture_default_str();
    train->add_option("--lr", train_args.lr)->capture_default_str();
    train->add_option("--wd", train_args.wd, "weight decay")->capture_default_str();
    train->add_option("--variant", train_args.variant, "dual block variant A-D")->capture_default_str();
    train->add_option("--out", train_args.out, "checkpoint path");
    train->add_option("--csv", train_args.csv, "per-step loss CSV (step,loss,lr)");
    train->add_option("--log-every", train_args.log_every, "0 disables progress lines")->capture_default_str();
    train->add_flag("--json", as_json, "machine-readable summary");

    std::string checkpoint;
    std::size_t eval_batch = 32;
    auto* eval = app.add_subcommand("eval", "accuracy of a checkpoint on a dataset");
    eval->add_option("--checkpoint", checkpoint, "checkpoint written by train")->required();
    add_data_args(eval, data_args);
    eval->add_option("--batch", eval_batch)->capture_default_str();
    eval->add_flag("--json", as_json, "machine-readable output");

    std::size_t ablate_steps = 0;
    std::size_t ablate_batch = 16;
    auto* ablate = app.add_subcommand("ablate", "compare dual block variants A-D");
    add_model_args(ablate, model_args);
    add_data_args(ablate, data_args);
    ablate->add_option("--res", res, "input resolution for MACs");
    ablate->add_option("--train-steps", ablate_steps, "also toy-train each variant")->capture_default_str();
    ablate->add_option("--batch", ablate_batch)->capture_default_str();
    ablate->add_flag("--json", as_json, "machine-readable output");

    std::string synth_out;
    std::size_t synth_classes = 8, synth_per_class = 8, synth_res = 32;
    std::uint64_t synth_seed = 0;
    auto* synth = app.add_subcommand("synth", "write a synthetic dataset as a .dvds file");
    synth->add_option("--out", synth_out)->required();
    synth->add_option("--classes", synth_classes)->capture_default_str();
    synth->add_option("--per-class", synth_per_class)->capture_default_str();
    synth->add_option("--res", synth_res)->capture_default_str();
    synth->add_option("--seed", synth_seed)->capture_default_str();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*describe) return cmd_describe(model_args, res, as_json, out);
        if (*count) return cmd_count(model_args, res, variant, as_json, out);
        if (*gradcheck) return cmd_gradcheck(block, gc, as_json, out);
        if (*train) return cmd_train(model_args, data_args, train_args, as_json, out, err);
        if (*eval) return cmd_eval(checkpoint, data_args, eval_batch, as_json, out);
        if (*ablate) return cmd_ablate(model_args, res, ablate_steps, data_args, ablate_batch, as_json, out);
        if (*synth) {
            save_packed_dataset(make_synthetic(synth_classes, synth_per_class, synth_res, synth_seed), synth_out);
            out << "wrote " << synth_classes * synth_per_class << " samples to " << synth_out << '\n';
            return kExitOk;
        }
    } catch (const NumericError& e) {
        err << "error: " << e.what() << '\n';
        return kExitCheckFailed;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args, out, err);
}

}  // namespace dualvit

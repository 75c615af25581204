#include "dualvit/training.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

#include "dualvit/blocks.hpp"
#include "dualvit/checkpoint.hpp"

namespace dualvit {

template <typename T>
AdamW<T>::AdamW(std::vector<Tensor<T>> params, AdamWOptions options)
    : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

template <typename T>
AdamW<T>::AdamW(const ParamRegistry<T>& registry, AdamWOptions options)
    : AdamW(
          [&] {
              std::vector<Tensor<T>> ps;
              for (const auto& e : registry) ps.push_back(e.tensor);
              return ps;
          }(),
          options) {}

template <typename T>
void AdamW<T>::step() {
    ++t_;
    const double lr = options_.lr;
    const double b1 = options_.beta1;
    const double b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const double decay = 1.0 - lr * options_.weight_decay;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = params_[k];
        if (m_[k].size() != p.numel()) {
            throw ContractError("adamw: parameter " + std::to_string(k) + " changed size from " +
                                std::to_string(m_[k].size()) + " to " + std::to_string(p.numel()));
        }
        const bool has = p.has_grad();
        if (has && p.grad().size() != p.numel()) throw ContractError("adamw: gradient shape mismatch");
        auto data = p.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = has ? static_cast<double>(p.grad()[i]) : 0.0;
            auto& m = m_[k][i];
            auto& v = v_[k][i];
            m = b1 * m + (1 - b1) * g;
            v = b2 * v + (1 - b2) * g * g;
            double x = static_cast<double>(data[i]) * decay;
            x -= lr * (m / c1) / (std::sqrt(v / c2) + options_.eps);
            data[i] = static_cast<T>(x);
        }
    }
}

template <typename T>
void AdamW<T>::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

template class AdamW<float>;
template class AdamW<double>;

double cosine_lr(double base_lr, std::size_t step, std::size_t total) {
    if (total == 0) return base_lr;
    const double t = static_cast<double>(std::min(step, total)) / static_cast<double>(total);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

namespace {

void check_dataset_fits(const Model<float>& model, const Dataset& data) {
    data.validate();
    const auto& c = model.config();
    if (data.height() != c.resolution || data.width() != c.resolution) {
        throw InputError("dataset images are " + std::to_string(data.height()) + "x" + std::to_string(data.width()) +
                         " but the model expects " + std::to_string(c.resolution) + "x" +
                         std::to_string(c.resolution));
    }
    if (data.num_classes > c.num_classes) {
        throw InputError("dataset has " + std::to_string(data.num_classes) + " classes, model only " +
                         std::to_string(c.num_classes));
    }
}

std::vector<std::vector<float>> snapshot(const ParamRegistry<float>& reg) {
    std::vector<std::vector<float>> out;
    for (const auto& e : reg) out.emplace_back(e.tensor.data().begin(), e.tensor.data().end());
    return out;
}

void restore(ParamRegistry<float>& reg, const std::vector<std::vector<float>>& saved) {
    std::size_t k = 0;
    for (auto& e : reg) {
        std::copy(saved[k].begin(), saved[k].end(), e.tensor.mutable_data().begin());
        ++k;
    }
}

}  // namespace

TrainReport train_toy(Model<float>& model, const Dataset& data, const TrainOptions& options) {
    check_dataset_fits(model, data);
    if (options.batch_size == 0) throw InputError("batch size must be positive");
    const auto start = std::chrono::steady_clock::now();
    auto& reg = model.parameters();
    AdamW<float> opt(reg, options.optimizer);
    std::mt19937_64 order_rng(options.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    const std::size_t batch = std::min(options.batch_size, data.size());

    TrainReport report;
    auto last_good = snapshot(reg);
    std::vector<std::size_t> idx(batch);
    std::vector<int> labels;
    for (std::size_t step = 0; step < options.steps; ++step) {
        for (std::size_t b = 0; b < batch; ++b) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), order_rng);
                cursor = 0;
            }
            idx[b] = order[cursor++];
        }
        const double lr = cosine_lr(options.optimizer.lr, step, options.steps);
        opt.set_lr(lr);

        double loss_value = std::numeric_limits<double>::quiet_NaN();
        Tensor<float> loss;
        try {
            auto images = data.gather(idx, &labels);
            loss = cross_entropy_with_logits(model.forward(images), std::span<const int>(labels));
            loss_value = loss.item();
        } catch (const NumericError&) {
            // debug sentinel fired; handled as a non-finite loss below
        }
        if (!std::isfinite(loss_value)) {
            restore(reg, last_good);
            std::string where;
            if (!options.last_good_checkpoint.empty()) {
                save_checkpoint(model, options.last_good_checkpoint);
                where = "; last good parameters saved to " + options.last_good_checkpoint.string();
            }
            throw NumericError("non-finite loss at step " + std::to_string(step) + where);
        }
        last_good = snapshot(reg);
        reg.zero_grad();
        backward(loss);
        opt.step();
        report.losses.push_back(loss_value);
        report.lrs.push_back(lr);
        if (options.on_step) options.on_step(step, loss_value, lr);
    }
    report.final_accuracy = evaluate(model, data);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

double evaluate(const Model<float>& model, const Dataset& data, std::size_t batch_size) {
    check_dataset_fits(model, data);
    NoGradGuard guard;
    std::size_t correct = 0;
    std::vector<int> labels;
    for (std::size_t lo = 0; lo < data.size(); lo += batch_size) {
        const std::size_t hi = std::min(data.size(), lo + batch_size);
        std::vector<std::size_t> idx(hi - lo);
        std::iota(idx.begin(), idx.end(), lo);
        auto logits = model.forward(data.gather(idx, &labels));
        const std::size_t classes = logits.dim(1);
        for (std::size_t b = 0; b < idx.size(); ++b) {
            auto row = logits.data().subspan(b * classes, classes);
            const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
            if (best == labels[b]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------

double gradcheck_rel_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

GradcheckReport gradcheck(const std::function<Tensor<double>()>& loss_fn, ParamRegistry<double>& params,
                          const GradcheckOptions& options, std::string target) {
    GradcheckReport report;
    report.target = std::move(target);
    report.tolerance = options.tolerance;
    report.total_params = params.total_numel();

    params.zero_grad();
    backward(loss_fn());

    // (tensor, element) pairs: one per tensor, then uniform over everything.
    std::mt19937_64 rng(options.seed);
    std::vector<std::size_t> offsets;
    std::size_t total = 0;
    for (const auto& e : params) {
        offsets.push_back(total);
        total += e.tensor.numel();
    }
    std::set<std::size_t> picked;
    for (std::size_t k = 0; k < params.size(); ++k) {
        picked.insert(offsets[k] + std::uniform_int_distribution<std::size_t>(0, params[k].tensor.numel() - 1)(rng));
    }
    const std::size_t want = std::min(total, std::max(options.samples, params.size()));
    std::uniform_int_distribution<std::size_t> any(0, total - 1);
    while (picked.size() < want) picked.insert(any(rng));

    for (std::size_t flat : picked) {
        const std::size_t k = static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), flat) -
                                                       offsets.begin()) - 1;
        const std::size_t i = flat - offsets[k];
        auto& t = (params.begin() + static_cast<std::ptrdiff_t>(k))->tensor;
        const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
        auto values = t.mutable_data();
        const double saved = values[i];
        double plus = 0.0;
        double minus = 0.0;
        {
            NoGradGuard guard;
            values[i] = saved + options.step;
            plus = loss_fn().item();
            values[i] = saved - options.step;
            minus = loss_fn().item();
        }
        values[i] = saved;
        const double numeric = (plus - minus) / (2 * options.step);
        const double err = gradcheck_rel_error(analytic, numeric);
        ++report.checked;
        report.max_rel_error = std::max(report.max_rel_error, err);
        if (!(err < options.tolerance)) report.failures.push_back({params[k].name, i, analytic, numeric, err});
    }
    std::sort(report.failures.begin(), report.failures.end(),
              [](const auto& a, const auto& b) { return a.rel_error > b.rel_error; });
    return report;
}

const std::vector<std::string>& gradcheck_targets() {
    static const std::vector<std::string> t{"dual", "merge", "transformer", "model"};
    return t;
}

namespace {

constexpr double kJitter = 0.1;

void jitter(ParamRegistry<double>& reg, std::mt19937_64& gen) {
    std::normal_distribution<double> d(0.0, kJitter);
    for (auto& e : reg)
        for (double& v : e.tensor.mutable_data()) v += d(gen);
}

Tensor<double> gaussian(Shape shape, std::mt19937_64& gen, bool requires_grad = false) {
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = d(gen);
    return Tensor<double>(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

GradcheckReport gradcheck_target(const std::string& target, const GradcheckOptions& options) {
    const auto tiny = preset_config("tiny");
    const auto& s1 = tiny.stages[0];
    const auto& s3 = tiny.stages[2];
    const std::size_t m = tiny.semantic_tokens;
    const std::size_t g1 = tiny.grid_at(0);
    const std::size_t g3 = tiny.grid_at(2);
    Rng rng(options.seed + 1);
    std::mt19937_64 gen(options.seed + 2);
    ParamRegistry<double> reg;

    if (target == "dual") {
        DualBlock<double> blk(s1.channels, s1.heads, s1.ratio_pixel, s1.ratio_semantic, rng);
        blk.collect("dual", reg);
        jitter(reg, gen);
        auto x = gaussian({2, g1 * g1, s1.channels}, gen);
        auto z = gaussian({2, m, s1.channels}, gen);
        auto rx = gaussian(x.shape(), gen);
        auto rz = gaussian(z.shape(), gen);
        return gradcheck(
            [&] {
                auto [xo, zo] = blk.forward({x, g1, g1}, {z});
                return add(mean_all(mul(xo.tokens, rx)), mean_all(mul(zo.tokens, rz)));
            },
            reg, options, target);
    }
    if (target == "merge") {
        MergeBlock<double> blk(s3.channels, s3.heads, s3.ratio_pixel, s3.ratio_semantic, rng);
        blk.collect("merge", reg);
        jitter(reg, gen);
        auto x = gaussian({2, g3 * g3, s3.channels}, gen);
        auto z = gaussian({2, m, s3.channels}, gen);
        auto rx = gaussian(x.shape(), gen);
        auto rz = gaussian(z.shape(), gen);
        return gradcheck(
            [&] {
                auto [xo, zo] = blk.forward({x, g3, g3}, {z});
                return add(mean_all(mul(xo.tokens, rx)), mean_all(mul(zo.tokens, rz)));
            },
            reg, options, target);
    }
    if (target == "transformer") {
        TransformerBlock<double> blk(s1.channels, s1.heads, s1.ratio_pixel, rng);
        blk.collect("transformer", reg);
        jitter(reg, gen);
        auto x = gaussian({2, g1 * g1, s1.channels}, gen);
        auto rx = gaussian(x.shape(), gen);
        return gradcheck([&] { return mean_all(mul(blk.forward_tokens(x), rx)); }, reg, options, target);
    }
    if (target == "model") {
        auto cfg = tiny;
        cfg.seed = options.seed;
        Model<double> model(cfg);
        jitter(model.parameters(), gen);
        const auto data = make_synthetic(cfg.num_classes, 1, cfg.resolution, options.seed);
        std::vector<double> px(data.images.data().begin(), data.images.data().end());
        Tensor<double> images(data.images.shape(), std::move(px));
        return gradcheck(
            [&] { return cross_entropy_with_logits(model.forward(images), std::span<const int>(data.labels)); },
            model.parameters(), options, target);
    }
    std::string list;
    for (const auto& t : gradcheck_targets()) list += (list.empty() ? "" : ", ") + t;
    throw ConfigError("unknown gradcheck target '" + target + "' (available: " + list + ")");
}

}  // namespace dualvit

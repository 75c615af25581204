#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dualvit/data.hpp"
#include "dualvit/model.hpp"

namespace dualvit {

struct AdamWOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

// Decoupled weight decay: p <- p (1 - lr wd), then p <- p - lr m_hat / (sqrt(v_hat) + eps).
// Decay applies to every registered tensor. Moments are kept in double.
template <typename T>
class AdamW {
public:
    AdamW(std::vector<Tensor<T>> params, AdamWOptions options = {});
    explicit AdamW(const ParamRegistry<T>& registry, AdamWOptions options = {});

    // Parameters without a gradient buffer are treated as having zero gradient.
    void step();
    void zero_grad();

    void set_lr(double lr) { options_.lr = lr; }
    double lr() const { return options_.lr; }
    std::size_t steps() const { return t_; }

private:
    std::vector<Tensor<T>> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    AdamWOptions options_;
    std::size_t t_ = 0;
};

// lr * 0.5 * (1 + cos(pi * step / total)); step 0 gives lr, step == total gives 0.
double cosine_lr(double base_lr, std::size_t step, std::size_t total);

struct TrainOptions {
    std::size_t steps = 500;
    std::size_t batch_size = 16;
    AdamWOptions optimizer{};
    std::uint64_t seed = 0;  // batch order
    // Called after every step with (step, loss, lr).
    std::function<void(std::size_t, double, double)> on_step;
    // Written with the last finite parameters if the loss turns non-finite.
    std::filesystem::path last_good_checkpoint;
};

struct TrainReport {
    std::vector<double> losses;
    std::vector<double> lrs;
    double final_accuracy = 0.0;
    double seconds = 0.0;
};

// Cross-entropy training with cosine decay. A non-finite loss restores the
// parameters from before that step, optionally saves them, and throws
// NumericError.
TrainReport train_toy(Model<float>& model, const Dataset& data, const TrainOptions& options);

// Fraction of samples whose arg-max logit equals the label.
double evaluate(const Model<float>& model, const Dataset& data, std::size_t batch_size = 32);

struct GradcheckFailure {
    std::string name;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradcheckReport {
    std::string target;
    std::size_t total_params = 0;
    std::size_t checked = 0;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    std::vector<GradcheckFailure> failures;  // worst first

    bool passed() const { return failures.empty(); }
};

struct GradcheckOptions {
    std::size_t samples = 256;  // at least one per tensor, rest uniform
    double step = 1e-5;
    double tolerance = 1e-4;
    std::uint64_t seed = 0;
};

// |a - b| / max(|a|, |b|, 1e-8)
double gradcheck_rel_error(double analytic, double numeric);

// Central differences on a sample of registry entries for a scalar loss.
GradcheckReport gradcheck(const std::function<Tensor<double>()>& loss_fn, ParamRegistry<double>& params,
                          const GradcheckOptions& options, std::string target = "custom");

// Targets: "dual", "merge", "transformer" (Tiny stage-1/3 shapes, loss
// mean(R * output) with a fixed Gaussian R) and "model" (Tiny network,
// cross-entropy on a synthetic batch). Parameters are redrawn around their
// initial values so biases and norms are generic.
GradcheckReport gradcheck_target(const std::string& target, const GradcheckOptions& options);
const std::vector<std::string>& gradcheck_targets();

}  // namespace dualvit

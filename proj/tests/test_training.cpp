#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>

#include "doctest.h"
#include "dualvit/checkpoint.hpp"
#include "dualvit/ops.hpp"
#include "dualvit/training.hpp"
#include "test_util.hpp"

using namespace dualvit;
using testutil::to_vec;

namespace {

std::vector<std::vector<float>> snapshot_of(const Model<float>& m) {
    std::vector<std::vector<float>> out;
    for (const auto& e : m.parameters()) out.push_back(to_vec(e.tensor));
    return out;
}

// loss = sum(g * p) so the gradient is g regardless of p
Tensor<double> linear_loss(const Tensor<double>& p, const std::vector<double>& g) {
    return sum(mul(p, Tensor<double>({g.size()}, g)));
}

}  // namespace

TEST_CASE("AdamW decay alone shrinks by 1 - lr wd") {
    auto p = Tensor<double>({3}, {1.5, -2.0, 0.25}, true);
    AdamW<double> opt(std::vector<Tensor<double>>{p}, {.lr = 0.1, .weight_decay = 0.3});
    backward(linear_loss(p, {0.0, 0.0, 0.0}));
    opt.step();
    const double f = 1.0 - 0.1 * 0.3;
    CHECK(to_vec(p) == std::vector<double>{1.5 * f, -2.0 * f, 0.25 * f});
}

TEST_CASE("AdamW first step is lr times sign") {
    auto p = Tensor<double>({4}, {0.0, 1.0, -1.0, 3.0}, true);
    AdamW<double> opt(std::vector<Tensor<double>>{p}, {.lr = 0.01, .weight_decay = 0.0});
    backward(linear_loss(p, {2.0, -0.5, 1e-3, -7.0}));
    opt.step();
    const auto v = to_vec(p);
    CHECK(v[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(v[1] == doctest::Approx(1.01).epsilon(1e-6));
    CHECK(v[2] == doctest::Approx(-1.01).epsilon(1e-6));
    CHECK(v[3] == doctest::Approx(3.01).epsilon(1e-6));
    CHECK(opt.steps() == 1);
}

TEST_CASE("AdamW three steps against a scalar recurrence") {
    const double lr = 0.05, b1 = 0.8, b2 = 0.95, eps = 1e-6, wd = 0.1;
    const std::vector<double> grads{0.5, -0.2, 0.1};
    auto p = Tensor<double>({1}, {1.0}, true);
    AdamW<double> opt(std::vector<Tensor<double>>{p}, {lr, b1, b2, eps, wd});

    long double x = 1.0L, m = 0, v = 0;
    for (int t = 1; t <= 3; ++t) {
        const long double g = grads[t - 1];
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const long double mh = m / (1 - std::pow(static_cast<long double>(b1), t));
        const long double vh = v / (1 - std::pow(static_cast<long double>(b2), t));
        x = x - lr * wd * x;
        x = x - lr * mh / (std::sqrt(vh) + eps);

        p.zero_grad();
        backward(linear_loss(p, {grads[t - 1]}));
        opt.step();
        CHECK(std::abs(to_vec(p)[0] - static_cast<double>(x)) < 1e-7);
    }
}

TEST_CASE("AdamW treats missing gradients as zero") {
    auto a = Tensor<double>({1}, {2.0}, true);
    auto b = Tensor<double>({1}, {3.0}, true);
    AdamW<double> opt(std::vector<Tensor<double>>{a, b}, {.lr = 0.1, .weight_decay = 0.0});
    backward(linear_loss(a, {1.0}));
    opt.step();
    CHECK(to_vec(b)[0] == 3.0);
    CHECK(to_vec(a)[0] < 2.0);
}

TEST_CASE("cosine schedule") {
    CHECK(cosine_lr(1e-3, 0, 100) == doctest::Approx(1e-3));
    CHECK(cosine_lr(1e-3, 50, 100) == doctest::Approx(5e-4));
    CHECK(cosine_lr(1e-3, 100, 100) == doctest::Approx(0.0));
    CHECK(cosine_lr(1e-3, 25, 100) == doctest::Approx(1e-3 * 0.5 * (1 + std::cos(std::numbers::pi / 4))));
    for (std::size_t s = 1; s <= 100; ++s) CHECK(cosine_lr(1.0, s, 100) <= cosine_lr(1.0, s - 1, 100));
}

TEST_CASE("zero learning rate leaves the model alone") {
    Model<float> model(preset_config("tiny"));
    const auto before = snapshot_of(model);
    const auto data = make_synthetic(8, 2, 32, 1);
    TrainOptions opts;
    opts.steps = 4;
    opts.batch_size = 16;  // whole set each step
    opts.optimizer.lr = 0.0;
    const auto report = train_toy(model, data, opts);
    CHECK(snapshot_of(model) == before);
    REQUIRE(report.losses.size() == 4);
    for (double l : report.losses) CHECK(std::abs(l - report.losses[0]) < 1e-6);
    CHECK(std::abs(report.losses[0] - std::log(8.0)) < 0.2);
}

TEST_CASE("training is reproducible") {
    const auto data = make_synthetic(8, 2, 32, 4);
    TrainOptions opts;
    opts.steps = 6;
    opts.batch_size = 4;
    opts.seed = 3;
    Model<float> a(preset_config("tiny"));
    Model<float> b(preset_config("tiny"));
    const auto ra = train_toy(a, data, opts);
    const auto rb = train_toy(b, data, opts);
    CHECK(ra.losses == rb.losses);
    CHECK(snapshot_of(a) == snapshot_of(b));
    CHECK(ra.lrs.front() == doctest::Approx(1e-3));
}

TEST_CASE("non-finite loss restores the last good parameters") {
    Model<float> model(preset_config("tiny"));
    const auto data = make_synthetic(8, 2, 32, 1);
    const auto ckpt = std::filesystem::temp_directory_path() / "dualvit_last_good.dvcp";
    std::filesystem::remove(ckpt);
    std::vector<std::vector<float>> good;
    TrainOptions opts;
    opts.steps = 10;
    opts.batch_size = 4;
    opts.last_good_checkpoint = ckpt;
    opts.on_step = [&](std::size_t step, double, double) {
        if (step == 1) good = snapshot_of(model);
        if (step == 2) {
            auto w = model.parameters().begin()->tensor.mutable_data();
            w[0] = std::numeric_limits<float>::quiet_NaN();
        }
    };
    try {
        train_toy(model, data, opts);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("step 3") != std::string::npos);
    }
    CHECK(snapshot_of(model) == good);
    REQUIRE(std::filesystem::exists(ckpt));
    CHECK(snapshot_of(load_checkpoint(ckpt)) == good);
}

TEST_CASE("training input errors") {
    Model<float> model(preset_config("tiny"));
    TrainOptions opts;
    opts.steps = 1;
    CHECK_THROWS_AS(train_toy(model, make_synthetic(8, 1, 16, 1), opts), InputError);
    CHECK_THROWS_AS(train_toy(model, make_synthetic(9, 1, 32, 1), opts), InputError);
    opts.batch_size = 0;
    CHECK_THROWS_AS(train_toy(model, make_synthetic(8, 1, 32, 1), opts), InputError);
}

TEST_CASE("relative error") {
    CHECK(gradcheck_rel_error(1.0, 1.0) == 0.0);
    CHECK(gradcheck_rel_error(2.0, 1.0) == doctest::Approx(0.5));
    CHECK(gradcheck_rel_error(0.0, 1e-10) == doctest::Approx(1e-2));
    CHECK(gradcheck_rel_error(0.0, 0.0) == 0.0);
}

TEST_CASE("gradcheck catches a wrong gradient") {
    ParamRegistry<double> reg;
    auto good = Tensor<double>({3}, {0.3, -0.7, 1.1}, true);
    auto bad = Tensor<double>({2}, {0.5, 0.9}, true);
    reg.add("good", good);
    reg.add("bad", bad);
    // the taped graph sees 3x on "bad" while the plain evaluation sees 2x
    auto loss_fn = [&] {
        auto l = sum(mul(good, good));
        const double k = grad_enabled() ? 3.0 : 2.0;
        return add(l, scale(sum(mul(bad, bad)), k));
    };
    const auto report = gradcheck(loss_fn, reg, {.samples = 16}, "rigged");
    CHECK_FALSE(report.passed());
    CHECK(report.total_params == 5);
    for (const auto& f : report.failures) CHECK(f.name == "bad");
    CHECK(report.max_rel_error == doctest::Approx(1.0 / 3.0).epsilon(1e-4));
}

TEST_CASE("gradcheck on every target") {
    for (const auto& target : gradcheck_targets()) {
        CAPTURE(target);
        const auto r = gradcheck_target(target, {});
        CHECK(r.passed());
        CHECK(r.max_rel_error < 1e-4);
        CHECK(r.checked >= 256);
        MESSAGE(target << " max rel error " << r.max_rel_error);
    }
    CHECK_THROWS_AS(gradcheck_target("conv", {}), ConfigError);
}

TEST_CASE("overfit 64 samples with variant A") {
    Model<float> model(preset_config("tiny"), AblationVariant::A);
    const auto data = make_synthetic(8, 8, 32, 0);
    TrainOptions opts;  // 500 steps, batch 16
    const auto report = train_toy(model, data, opts);
    MESSAGE("loss " << report.losses.front() << " -> " << report.losses.back() << ", accuracy " << report.final_accuracy);
    CHECK(report.final_accuracy >= 0.99);
    CHECK(report.losses.back() < report.losses.front());
}

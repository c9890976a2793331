#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>

#include "test_util.hpp"
#include "tunet/io.hpp"
#include "tunet/train.hpp"

using namespace tunet;
namespace fs = std::filesystem;

namespace {

using T = Tensor<double>;

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("tunet_train_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Scalar Adam with decoupled decay, written out step by step.
struct ScalarAdamW {
    double theta, m = 0, v = 0, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0;
    int t = 0;
    void step(double g, double lr) {
        ++t;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        theta = theta * (1 - lr * wd) - lr * mhat / (std::sqrt(vhat) + eps);
    }
};

std::vector<NamedTensor<double>> scalar_param(double value) {
    return {{"w", T::from({1}, {value}, true)}};
}

}  // namespace

// ---------------------------------------------------------------- loss

TEST(Bce, PerfectPredictionIsClampFloor) {
    const auto y = T::from({1, 2, 2}, {1, 0, 0, 1});
    const double loss = bce_loss(y, y).item();
    EXPECT_GE(loss, 0.0);
    EXPECT_LE(loss, -std::log(1 - kBceEpsilon) + 1e-15);
}

TEST(Bce, HalfIsLn2) {
    const auto p = T::full({1, 3, 3}, 0.5);
    const auto y = T::from({1, 3, 3}, {1, 0, 1, 1, 0, 0, 0, 1, 1});
    EXPECT_NEAR(bce_loss(p, y).item(), std::log(2.0), 1e-12);
    EXPECT_NEAR(bce_loss(p, y).item(), 0.693147, 1e-6);
}

TEST(Bce, TwoPixelHandValue) {
    const double loss = bce_loss(T::from({1, 1, 2}, {0.9, 0.2}), T::from({1, 1, 2}, {1, 0})).item();
    EXPECT_NEAR(loss, -0.5 * (std::log(0.9) + std::log(0.8)), 1e-12);
    EXPECT_NEAR(loss, 0.164252, 1e-6);
}

TEST(Bce, Errors) {
    EXPECT_THROW(bce_loss(T::full({1, 2, 2}, 0.5), T::zeros({1, 2, 3})), DimensionError);
    EXPECT_THROW(bce_loss(T::full({1, 1, 2}, 0.5), T::from({1, 1, 2}, {0.5, 1})), ValidationError);
}

TEST(Bce, NonNegativeOnRandomInputs) {
    std::mt19937_64 rng(60);
    std::bernoulli_distribution coin(0.3);
    for (int trial = 0; trial < 200; ++trial) {
        auto p = tunet::testing::random_tensor({1, 3, 3}, rng, 0.0, 1.0);
        Vector<double> y(9);
        for (Index i = 0; i < 9; ++i) y[i] = coin(rng);
        EXPECT_GE(bce_loss(p, T({1, 3, 3}, y)).item(), 0.0);
    }
}

TEST(Bce, PixelGradientMatchesClosedFormAndFiniteDifferences) {
    std::mt19937_64 rng(61);
    const Index n = 6;
    auto p = tunet::testing::random_tensor({1, 2, 3}, rng, 0.05, 0.95, true);
    const auto y = T::from({1, 2, 3}, {1, 0, 0, 1, 1, 0});
    {
        GradTape<double> tape;
        tape.backward(bce_loss(p, y));
    }
    const auto g = p.grad();
    for (Index i = 0; i < n; ++i) {
        const double pi = p.value()[i], yi = y.value()[i];
        EXPECT_NEAR(g[i], (pi - yi) / (pi * (1 - pi)) / n, 1e-12);
        const double h = 1e-6;
        auto& v = p.mutable_value();
        v[i] = pi + h;
        const double up = bce_loss(p, y).item();
        v[i] = pi - h;
        const double down = bce_loss(p, y).item();
        v[i] = pi;
        EXPECT_NEAR(g[i], (up - down) / (2 * h), 1e-6);
    }
}

TEST(Bce, ClampedPixelHasZeroGradient) {
    auto p = T::from({1, 1, 2}, {0.0, 0.5}, true);
    {
        GradTape<double> tape;
        tape.backward(bce_loss(p, T::from({1, 1, 2}, {1, 1})));
    }
    EXPECT_EQ(p.grad()[0], 0.0);
    EXPECT_NE(p.grad()[1], 0.0);
}

// ---------------------------------------------------------------- optimizer

TEST(AdamW, ZeroGradientIsPureDecay) {
    auto params = scalar_param(2.0);
    AdamWOptions opts;
    opts.weight_decay = 0.1;
    AdamWState<double> state(params, opts);
    const std::vector<Vector<double>> grads{Vector<double>::Zero(1)};
    adamw_step<double>(params, grads, state, 0.01);
    EXPECT_EQ(params[0].second.value()[0], 2.0 * (1 - 0.01 * 0.1));
    EXPECT_EQ(state.step, 1);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
    auto params = scalar_param(0.0);
    AdamWOptions opts;
    opts.weight_decay = 0;
    AdamWState<double> state(params, opts);
    const std::vector<Vector<double>> grads{Vector<double>::Ones(1)};
    adamw_step<double>(params, grads, state, 1e-3);
    EXPECT_NEAR(params[0].second.value()[0], -1e-3 / (1 + 1e-8), 1e-18);
    EXPECT_NEAR(params[0].second.value()[0], -1e-3, 1e-10);
}

TEST(AdamW, ThreeStepHandRecurrence) {
    auto params = scalar_param(0.5);
    AdamWOptions opts;
    opts.weight_decay = 0.01;
    AdamWState<double> state(params, opts);
    ScalarAdamW ref{0.5};
    ref.wd = 0.01;
    for (double g : {1.0, -1.0, 2.0}) {
        const std::vector<Vector<double>> grads{Vector<double>::Constant(1, g)};
        adamw_step<double>(params, grads, state, 1e-2);
        ref.step(g, 1e-2);
        EXPECT_NEAR(params[0].second.value()[0], ref.theta, 1e-12);
        EXPECT_NEAR(state.m[0][0], ref.m, 1e-15);
        EXPECT_NEAR(state.v[0][0], ref.v, 1e-15);
    }
}

TEST(AdamW, ReducesToAdamForFiveSteps) {
    auto params = scalar_param(-0.3);
    AdamWOptions opts;
    opts.weight_decay = 0;
    AdamWState<double> state(params, opts);
    ScalarAdamW ref{-0.3};
    for (double g : {0.4, -2.0, 0.1, 3.0, -0.7}) {
        const std::vector<Vector<double>> grads{Vector<double>::Constant(1, g)};
        adamw_step<double>(params, grads, state, 1e-3);
        ref.step(g, 1e-3);
        EXPECT_NEAR(params[0].second.value()[0], ref.theta, 1e-12);
    }
}

TEST(AdamW, ReadsAccumulatedTensorGradients) {
    auto params = scalar_param(1.0);
    {
        GradTape<double> tape;
        tape.backward(sum(mul(params[0].second, params[0].second)));  // grad 2
    }
    AdamWOptions opts;
    opts.weight_decay = 0;
    AdamWState<double> state(params, opts);
    adamw_step(params, state, 0.1);
    ScalarAdamW ref{1.0};
    ref.step(2.0, 0.1);
    EXPECT_NEAR(params[0].second.value()[0], ref.theta, 1e-15);
}

TEST(AdamW, ExcludeNormsAndBiasesSwitch) {
    std::vector<NamedTensor<double>> params{{"a.weight", T::from({1}, {1.0}, true)},
                                            {"a.bias", T::from({1}, {1.0}, true)},
                                            {"ln.gamma", T::from({1}, {1.0}, true)}};
    AdamWOptions opts;
    opts.weight_decay = 0.5;
    opts.exclude_norms_and_biases = true;
    AdamWState<double> state(params, opts);
    const std::vector<Vector<double>> grads(3, Vector<double>::Zero(1));
    adamw_step<double>(params, grads, state, 0.1);
    EXPECT_EQ(params[0].second.value()[0], 0.95);
    EXPECT_EQ(params[1].second.value()[0], 1.0);
    EXPECT_EQ(params[2].second.value()[0], 1.0);
}

TEST(AdamW, ShapeMismatchIsDimensionError) {
    auto params = scalar_param(1.0);
    AdamWState<double> state(params, {});
    const std::vector<Vector<double>> grads{Vector<double>::Zero(2)};
    EXPECT_THROW(adamw_step<double>(params, grads, state, 0.1), DimensionError);
}

// ---------------------------------------------------------------- schedule

TEST(Schedule, DefaultMilestones) {
    TrainConfig c;
    EXPECT_DOUBLE_EQ(lr_at(0, c), 1e-3);
    EXPECT_DOUBLE_EQ(lr_at(59, c), 1e-3);
    EXPECT_DOUBLE_EQ(lr_at(60, c), 5e-4);
    EXPECT_DOUBLE_EQ(lr_at(100, c), 2.5e-4);
    EXPECT_DOUBLE_EQ(lr_at(110, c), 2.5e-4);
    EXPECT_THROW(lr_at(-1, c), ContractError);
    EXPECT_THROW(lr_at(120, c), ContractError);
}

TEST(Schedule, NonIncreasingWithMilestonesPlusOneLevels) {
    std::mt19937_64 rng(62);
    for (int trial = 0; trial < 50; ++trial) {
        TrainConfig c;
        c.epochs = 10 + static_cast<long>(rng() % 200);
        c.milestones.clear();
        for (long e = 1; e < c.epochs; ++e) {
            if (rng() % 17 == 0) c.milestones.push_back(e);
        }
        std::vector<double> levels;
        for (long e = 0; e < c.epochs; ++e) {
            const double lr = lr_at(e, c);
            if (e > 0) {
                EXPECT_LE(lr, lr_at(e - 1, c));
            }
            if (levels.empty() || levels.back() != lr) levels.push_back(lr);
        }
        EXPECT_EQ(levels.size(), c.milestones.size() + 1);
    }
}

TEST(Schedule, ValidateRejectsBadMilestones) {
    TrainConfig c;
    c.milestones = {100, 60};
    EXPECT_THROW(c.validate(), ConfigError);
    c.milestones = {60, 120};
    EXPECT_THROW(c.validate(), ConfigError);
}

// ---------------------------------------------------------------- training loop

namespace {

TrainConfig short_run(long epochs) {
    TrainConfig t;
    t.epochs = epochs;
    t.milestones = {};
    t.batch_size = 2;
    t.seed = 5;
    t.gradcheck_mode = true;
    return t;
}

}  // namespace

TEST(Train, ZeroEpochsWritesHeaderAndInitialCheckpoints) {
    const auto dir = scratch("epochs0");
    const auto mc = ModelConfig::tiny();
    const auto data = synth_dataset(1, 2, 32, 32);
    TrainOutputs out;
    out.dir = dir;
    const auto res = train(mc, short_run(0), data, {}, out);
    EXPECT_EQ(res.steps, 0);
    EXPECT_EQ(slurp(dir / "metrics.csv"), metrics_csv_header() + "\n");
    const auto init = init_params<double>(mc, 5);
    for (const char* name : {"last.ckpt", "best.ckpt"}) {
        const auto cp = load_checkpoint<double>(dir / name, mc);
        const auto got = cp.named();
        const auto want = init.named();
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i].second.value(), want[i].second.value());
    }
}

TEST(Train, RowsPerEpochAndSplit) {
    const auto dir = scratch("rows");
    const auto data = synth_dataset(2, 5, 32, 32);
    const auto split = split_dataset(data, 0.4);
    TrainOutputs out;
    out.dir = dir;
    const auto res = train(ModelConfig::tiny(), short_run(2), split.train, split.val, out);
    ASSERT_EQ(res.log.size(), 4u);
    EXPECT_EQ(res.steps, 4);  // 3 training samples, batch 2
    std::ifstream in(dir / "metrics.csv");
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "epoch,split,loss,miou,dice,pixel_acc,precision,recall");
    std::vector<std::string> rows;
    while (std::getline(in, line)) rows.push_back(line);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[0].substr(0, 8), "0,train,");
    EXPECT_EQ(rows[1].substr(0, 6), "0,val,");
    EXPECT_EQ(rows[3].substr(0, 6), "1,val,");
    EXPECT_TRUE(fs::exists(dir / "best.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "last.ckpt"));
}

TEST(Train, DeterministicIn64Bit) {
    const auto data = synth_dataset(3, 4, 32, 32);
    std::vector<std::string> csv, ckpt;
    for (const char* run : {"a", "b"}) {
        const auto dir = scratch(std::string("det_") + run);
        TrainOutputs out;
        out.dir = dir;
        train(ModelConfig::tiny(), short_run(3), data, {}, out);
        csv.push_back(slurp(dir / "metrics.csv"));
        ckpt.push_back(slurp(dir / "last.ckpt"));
    }
    EXPECT_EQ(csv[0], csv[1]);
    EXPECT_EQ(ckpt[0], ckpt[1]);
}

TEST(Train, SmoothedLossIsMonotoneOnOverfitFixture) {
    const auto data = cast_samples<float>(synth_dataset(8, 8, 32, 32));
    TrainConfig t;
    t.epochs = 60;
    t.milestones = {};
    t.batch_size = 4;
    t.seed = 7;
    const auto res = train(ModelConfig::tiny(), t, data, {});
    ASSERT_EQ(res.step_losses.size(), 120u);
    double prev = INFINITY;
    for (std::size_t w = 0; w + 20 <= res.step_losses.size(); w += 20) {
        double mean = 0;
        for (std::size_t i = w; i < w + 20; ++i) mean += res.step_losses[i];
        mean /= 20;
        EXPECT_LE(mean, prev) << "window starting at step " << w;
        prev = mean;
    }
}

TEST(Train, EmptyDatasetIsRejected) {
    EXPECT_THROW(train<double>(ModelConfig::tiny(), short_run(1), {}, {}), ContractError);
}

// ---------------------------------------------------------------- evaluate

TEST(Evaluate, DuplicatedSampleGivesSameReport) {
    const auto mc = ModelConfig::tiny();
    const auto p = init_params<double>(mc, 9);
    const auto data = synth_dataset(10, 1, 32, 32);
    const auto one = evaluate(p, mc, data, 0.5);
    const auto two = evaluate(p, mc, std::vector{data[0], data[0]}, 0.5);
    EXPECT_EQ(one.report.dice, two.report.dice);
    EXPECT_EQ(one.report.miou, two.report.miou);
    EXPECT_NEAR(one.loss, two.loss, 1e-15);
    EXPECT_EQ(two.report.counts.total(), 2 * one.report.counts.total());
    EXPECT_THROW(evaluate<double>(p, mc, {}, 0.5), ContractError);
}

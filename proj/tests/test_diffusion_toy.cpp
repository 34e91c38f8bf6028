#include "support.hpp"

#include "uniflow/diffusion_toy.hpp"
#include "uniflow/toy_config.hpp"

#include <gtest/gtest.h>

using namespace uniflow;

namespace {

DenoiserDims tiny_dims(int data_dim) {
    DenoiserDims d;
    d.data_dim = data_dim;
    d.time_dim = 4;
    d.hidden = 8;
    return d;
}

std::vector<TrainingSample> points(std::initializer_list<Eigen::VectorXd> xs) {
    std::vector<TrainingSample> out;
    for (const auto& x : xs) out.push_back({x, {}});
    return out;
}

} // namespace

TEST(NoiseSchedule, LinearDefaults) {
    const auto s = NoiseSchedule::linear(100);
    EXPECT_EQ(s.steps(), 100);
    EXPECT_NEAR(s.beta(1), 1e-4, 1e-15);
    EXPECT_NEAR(s.beta(100), 0.02, 1e-15);
    EXPECT_GT(s.alpha_bar(1), 0.99);
    double prod = 1.0;
    for (int t = 1; t <= 100; ++t) {
        prod *= 1.0 - s.beta(t);
        EXPECT_NEAR(s.alpha_bar(t), prod, 1e-15);
        if (t > 1) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    }
}

TEST(NoiseSchedule, Validation) {
    EXPECT_THROW(NoiseSchedule::from_betas({}), ArgumentError);
    EXPECT_THROW(NoiseSchedule::from_betas({0.1, 0.0}), ArgumentError);
    EXPECT_THROW(NoiseSchedule::from_betas({0.1, 1.0}), ArgumentError);
    EXPECT_THROW(NoiseSchedule::linear(0), ArgumentError);
    const auto s = NoiseSchedule::linear(10);
    EXPECT_THROW(s.alpha_bar(0), ArgumentError);
    EXPECT_THROW(s.beta(11), ArgumentError);
}

TEST(ForwardDiffuse, Limits) {
    std::mt19937_64 rng(3);
    const Eigen::Vector3d x0(1, -2, 0.5);
    const auto keep = forward_diffuse_with(x0, 1.0, rng);
    EXPECT_EQ(keep.x_t, Eigen::VectorXd(x0));
    const auto pure = forward_diffuse_with(x0, 0.0, rng);
    EXPECT_EQ(pure.x_t, pure.eps);
    EXPECT_THROW(forward_diffuse_with(x0, 1.5, rng), ArgumentError);
}

TEST(ForwardDiffuse, MomentsMatchClosedForm) {
    const auto s = NoiseSchedule::linear(100);
    const Eigen::Vector2d x0(2.0, -1.0);
    for (int t : {10, 50, 100}) {
        const int n = 20000;
        Eigen::Vector2d mean = Eigen::Vector2d::Zero(), sq = Eigen::Vector2d::Zero();
        for (int i = 0; i < n; ++i) {
            const Eigen::VectorXd x = forward_diffuse(x0, t, s, static_cast<std::uint64_t>(i)).x_t;
            mean += x;
            sq += x.cwiseProduct(x);
        }
        mean /= n;
        const Eigen::Vector2d var = sq / n - mean.cwiseProduct(mean);
        const double ab = s.alpha_bar(t);
        for (int k = 0; k < 2; ++k) {
            EXPECT_NEAR(mean[k], std::sqrt(ab) * x0[k], 0.03 * std::abs(x0[k]));
            EXPECT_NEAR(var[k], 1.0 - ab, 0.03 * (1.0 - ab));
        }
    }
}

TEST(ForwardDiffuse, SameSeedSameDraw) {
    const auto s = NoiseSchedule::linear(50);
    const Eigen::Vector2d x0(0.3, 0.4);
    EXPECT_EQ(forward_diffuse(x0, 20, s, 8).x_t, forward_diffuse(x0, 20, s, 8).x_t);
    EXPECT_NE(forward_diffuse(x0, 20, s, 8).x_t, forward_diffuse(x0, 20, s, 9).x_t);
}

TEST(Loss, OraclePredictorIsExact) {
    const auto s = NoiseSchedule::linear(100);
    const Eigen::Vector3d star(0.5, -1.0, 2.0);
    const auto batch = points({star, star, star});
    auto oracle = [&](const Eigen::VectorXd& x, int t) -> Eigen::VectorXd {
        return (x - std::sqrt(s.alpha_bar(t)) * star) / std::sqrt(1.0 - s.alpha_bar(t));
    };
    EXPECT_LT(evaluate_loss(oracle, batch, s, 11), 1e-20);
}

TEST(Loss, ZeroModelLossIsDataDimension) {
    const auto s = NoiseSchedule::linear(100);
    const auto m = ToyDenoiser::zeros(tiny_dims(4));
    const auto data = points({Eigen::Vector4d(1, 2, 3, 4), Eigen::Vector4d(-1, 0, 0, 1)});
    EXPECT_NEAR(held_out_loss(m, data, s, 5, 4000), 4.0, 0.05 * 4.0);
    const auto zero = [](const Eigen::VectorXd& x, int) -> Eigen::VectorXd { return Eigen::VectorXd::Zero(x.size()); };
    EXPECT_NEAR(evaluate_loss(zero, data, s, 5), training_loss(m, data, s, 5).loss, 1e-12);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
    const auto s = NoiseSchedule::linear(30);
    auto m = ToyDenoiser::init(tiny_dims(2), 4);
    const auto data = points({Eigen::Vector2d(1, 0), Eigen::Vector2d(-1, 0.5)});
    const auto r = training_loss(m, data, s, 6);
    const Eigen::VectorXd flat = m.params.flatten(), g = r.grads.flatten();
    const double h = 1e-4;
    for (Eigen::Index i = 0; i < flat.size(); i += 7) {
        Eigen::VectorXd p = flat;
        p[i] += h;
        m.params.assign(p);
        const double hi = training_loss(m, data, s, 6).loss;
        p[i] -= 2 * h;
        m.params.assign(p);
        const double lo = training_loss(m, data, s, 6).loss;
        EXPECT_NEAR(g[i], (hi - lo) / (2 * h), 1e-6 * std::max(1.0, std::abs(g[i])));
    }
}

TEST(Sampling, ZeroModelTinyBetasKeepsUnitVariance) {
    const auto s = NoiseSchedule::from_betas(std::vector<double>(10, 1e-6));
    const auto m = ToyDenoiser::zeros(tiny_dims(2));
    const auto xs = sample(m, s, 4000, 21);
    double sq = 0, mean = 0;
    for (const auto& x : xs) {
        mean += x.sum();
        sq += x.squaredNorm();
    }
    const double n = 2.0 * static_cast<double>(xs.size());
    EXPECT_NEAR(mean / n, 0.0, 0.05);
    EXPECT_NEAR(std::sqrt(sq / n), 1.0, 0.05);
}

TEST(Sampling, ExactNoisePredictorLandsOnTarget) {
    const auto s = NoiseSchedule::linear(100);
    const Eigen::Vector2d star(1.5, -0.5);
    auto oracle = [&](const Eigen::VectorXd& x, int t) -> Eigen::VectorXd {
        return (x - std::sqrt(s.alpha_bar(t)) * star) / std::sqrt(1.0 - s.alpha_bar(t));
    };
    std::mt19937_64 rng(13);
    for (int i = 0; i < 20; ++i) {
        std::vector<Eigen::VectorXd> trace;
        const auto x = sample_chain(oracle, s, 2, rng, &trace);
        EXPECT_LT((x - star).norm(), 1e-9);
        EXPECT_EQ(trace.size(), 100u);
    }
}

TEST(Sampling, SeededAndShapeChecked) {
    const auto s = NoiseSchedule::linear(20);
    const auto m = ToyDenoiser::init(tiny_dims(3), 1);
    EXPECT_EQ(sample(m, s, 5, 2), sample(m, s, 5, 2));
    const Tensor2D cond = Tensor2D::Zero(2, 2);
    EXPECT_THROW(sample(m, s, 1, 2, &cond), DimensionError);
}

TEST(Train, ZeroStepsLeavesModelUnchanged) {
    const auto s = NoiseSchedule::linear(20);
    const auto m = ToyDenoiser::init(tiny_dims(2), 3);
    TrainConfig cfg;
    cfg.steps = 0;
    const auto r = train(m, points({Eigen::Vector2d(1, 1)}), s, cfg);
    EXPECT_EQ(r.model.params.flatten(), m.params.flatten());
    EXPECT_TRUE(r.loss_curve.empty());
}

TEST(Train, DeterministicAndImproves) {
    const auto s = NoiseSchedule::linear(50);
    const auto m = ToyDenoiser::init(tiny_dims(2), 3);
    const auto data = points({Eigen::Vector2d(1, 0), Eigen::Vector2d(-1, 0)});
    TrainConfig cfg;
    cfg.steps = 300;
    cfg.batch_size = 32;
    cfg.adam.lr = 3e-3;
    cfg.seed = 17;
    const auto a = train(m, data, s, cfg), b = train(m, data, s, cfg);
    EXPECT_EQ(a.model.params.flatten(), b.model.params.flatten());
    EXPECT_EQ(a.loss_curve, b.loss_curve);
    EXPECT_LT(held_out_loss(a.model, data, s, 99, 200), held_out_loss(m, data, s, 99, 200));
}

TEST(Train, NonFiniteLossRaises) {
    const auto s = NoiseSchedule::linear(10);
    const auto m = ToyDenoiser::init(tiny_dims(2), 3);
    const auto data = points({Eigen::Vector2d(std::numeric_limits<double>::quiet_NaN(), 0)});
    TrainConfig cfg;
    cfg.steps = 5;
    try {
        train(m, data, s, cfg);
        FAIL();
    } catch (const TrainingError& e) {
        EXPECT_EQ(e.step(), 0);
    }
    EXPECT_THROW(train(m, {}, s, cfg), ArgumentError);
}

TEST(ModeDataset, LatentsAndPurity) {
    ModeDatasetSpec spec;
    spec.count = 6;
    const auto data = make_mode_dataset(spec);
    const auto modes = mode_latents(spec);
    ASSERT_EQ(modes.size(), 2u);
    EXPECT_EQ(data[0].x0, modes[0]);
    EXPECT_EQ(data[3].x0, modes[1]);
    EXPECT_EQ(data[0].cond.rows(), 0);
    // Constant flow (1, 0) encodes to 1 in every u cell and 0 in every v cell.
    EXPECT_NEAR(modes[0].sum(), static_cast<double>(modes[0].size()) / 2.0, 1e-12);

    std::vector<Eigen::VectorXd> xs{modes[0], modes[1] * 0.9, Eigen::VectorXd::Zero(modes[0].size())};
    EXPECT_NEAR(mode_purity(xs, modes, 0.5), 2.0 / 3.0, 1e-12);

    spec.cond_sigma = 0.1;
    const auto conditioned = make_mode_dataset(spec);
    EXPECT_EQ(conditioned[1].cond.cols(), 2);
    EXPECT_GT(conditioned[1].cond.rows(), 0);
}

TEST(ToyConfig, ParsesAndDerivesSeeds) {
    const auto c = parse_toy_config(json::parse(R"({"seed":7,"model":{"hidden":16,"time_dim":8},
        "train":{"steps":10,"batch_size":4,"lr":0.01},"dataset":{"modes":[[0,1]],"count":3}})"));
    EXPECT_EQ(c.seed, 7u);
    EXPECT_EQ(c.hidden, 16);
    EXPECT_EQ(c.train.seed, 9u);
    EXPECT_EQ(c.dataset.seed, 8u);
    EXPECT_DOUBLE_EQ(c.train.adam.lr, 0.01);
    EXPECT_EQ(c.dataset.modes.size(), 1u);
    EXPECT_EQ(c.dims().data_dim, 2);

    auto path_of = [](const char* text) {
        try {
            parse_toy_config(json::parse(text));
        } catch (const SchemaError& e) {
            return e.path();
        }
        return std::string("none");
    };
    EXPECT_EQ(path_of(R"({"model":{"time_dim":3}})"), "/model/time_dim");
    EXPECT_EQ(path_of(R"({"dataset":{"modes":[[0]]}})"), "/dataset/modes/0");
    EXPECT_EQ(path_of(R"({"schedule":{"beta_end":2}})"), "/schedule");
    EXPECT_EQ(path_of(R"({"train":{"lr":"fast"}})"), "/train/lr");
}

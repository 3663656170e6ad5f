#include <gtest/gtest.h>

#include <cmath>

#include "sphereloss/datagen.hpp"
#include "sphereloss/train.hpp"

using namespace sphereloss;

namespace {

TrainConfig base_config(int steps, LossVariant variant, double m, double s = 64.0) {
    TrainConfig cfg;
    cfg.lr_schedule = {{0, 0.1}};
    cfg.momentum = 0.9;
    cfg.weight_decay = 5e-4;
    cfg.wd_mult = {{"embedding", 10.0}};
    cfg.batch_size = 32;
    cfg.max_steps = steps;
    cfg.seed = 42;
    cfg.stages = {{MarginLossSpec{variant, s, m}, 0, steps}};
    return cfg;
}

SphereDataset small_dataset() {
    return gen_sphere_dataset(SphereDatasetSpec{10, 4, 12, 0.08, 7});
}

bool histories_equal(const TrainHistory& a, const TrainHistory& b) {
    if (a.steps.size() != b.steps.size() || a.diverged != b.diverged ||
        a.divergence_step != b.divergence_step ||
        a.final_train_accuracy != b.final_train_accuracy || a.final_loss != b.final_loss)
        return false;
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
        const auto& x = a.steps[i];
        const auto& y = b.steps[i];
        if (x.step != y.step || x.loss != y.loss || x.train_acc != y.train_acc ||
            x.mean_target_angle != y.mean_target_angle || x.diverged != y.diverged)
            return false;
    }
    return true;
}

}  // namespace

TEST(SgdStep, VanillaUpdate) {
    nn::Param p;
    p.name = "w";
    p.value = Tensor({1});
    p.grad = Tensor({1});
    p.value(0) = 1.0;
    p.grad(0) = 0.1;
    TrainConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    SgdState state;
    std::vector<std::pair<std::string, nn::Param*>> params{{"w", &p}};
    ASSERT_TRUE(sgd_step(params, 0.1, cfg, state));
    EXPECT_DOUBLE_EQ(p.value(0), 0.99);
}

TEST(SgdStep, ZeroGradLeavesParamsUntouched) {
    nn::Param p;
    p.value = Tensor({2});
    p.grad = Tensor({2});
    p.value(0) = 1.0;
    p.value(1) = -2.0;
    TrainConfig cfg;
    cfg.momentum = 0.9;
    cfg.weight_decay = 0.0;
    SgdState state;
    std::vector<std::pair<std::string, nn::Param*>> params{{"p", &p}};
    ASSERT_TRUE(sgd_step(params, 0.1, cfg, state));
    EXPECT_EQ(p.value(0), 1.0);
    EXPECT_EQ(p.value(1), -2.0);
}

TEST(SgdStep, VelocityDecaysByMomentum) {
    nn::Param p;
    p.value = Tensor({1});
    p.grad = Tensor({1});
    p.value(0) = 0.0;
    p.grad(0) = 1.0;
    TrainConfig cfg;
    cfg.momentum = 0.5;
    cfg.weight_decay = 0.0;
    SgdState state;
    std::vector<std::pair<std::string, nn::Param*>> params{{"p", &p}};
    sgd_step(params, 1.0, cfg, state);  // v = 1
    p.grad(0) = 0.0;
    sgd_step(params, 1.0, cfg, state);  // v = 0.5
    EXPECT_DOUBLE_EQ(state.velocity.at("p")(0), 0.5);
    EXPECT_DOUBLE_EQ(p.value(0), -1.5);
}

TEST(SgdStep, WeightDecayMultiplier) {
    nn::Param p;
    p.group = "embedding";
    p.value = Tensor({1});
    p.grad = Tensor({1});
    p.value(0) = 1.0;
    TrainConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 5e-4;
    cfg.wd_mult = {{"embedding", 10.0}};
    SgdState state;
    std::vector<std::pair<std::string, nn::Param*>> params{{"p", &p}};
    sgd_step(params, 0.1, cfg, state);
    EXPECT_DOUBLE_EQ(p.value(0), 1.0 - 0.1 * 0.005);
}

TEST(SgdStep, NonFiniteGradientReported) {
    nn::Param p;
    p.value = Tensor({1});
    p.grad = Tensor({1});
    p.value(0) = 1.0;
    p.grad(0) = std::numeric_limits<double>::infinity();
    TrainConfig cfg;
    SgdState state;
    std::vector<std::pair<std::string, nn::Param*>> params{{"p", &p}};
    EXPECT_FALSE(sgd_step(params, 0.1, cfg, state));
    EXPECT_EQ(p.value(0), 1.0);  // no update applied
}

TEST(Train, EmptyWhenMaxStepsZero) {
    auto ds = small_dataset();
    auto model = make_dense_model(4, 16, 4, 42);
    TrainConfig cfg = base_config(0, LossVariant::NSoftmax, 0.0);
    cfg.max_steps = 0;
    cfg.stages.clear();
    auto hist = train(model, ds.data, cfg);
    EXPECT_TRUE(hist.steps.empty());
    EXPECT_FALSE(hist.diverged);
}

TEST(Train, DeterministicGivenSeed) {
    auto ds = small_dataset();
    auto run = [&] {
        auto model = make_dense_model(4, 16, 4, 42);
        return train(model, ds.data, base_config(120, LossVariant::LiArcFace, 0.4));
    };
    auto h1 = run();
    auto h2 = run();
    EXPECT_TRUE(histories_equal(h1, h2));
}

TEST(Train, WdMultIrrelevantWhenDecayZero) {
    auto ds = small_dataset();
    auto run = [&](std::map<std::string, double> mult) {
        auto model = make_dense_model(4, 16, 4, 42);
        TrainConfig cfg = base_config(80, LossVariant::LiArcFace, 0.4);
        cfg.weight_decay = 0.0;
        cfg.wd_mult = std::move(mult);
        return train(model, ds.data, cfg);
    };
    auto h1 = run({});
    auto h2 = run({{"embedding", 10.0}, {"body", 3.0}, {"centers", 0.5}});
    EXPECT_TRUE(histories_equal(h1, h2));
}

TEST(Train, StageSwitchCarriesParamsBitExactly) {
    auto ds = small_dataset();
    TrainConfig two_stage = base_config(100, LossVariant::NSoftmax, 0.0);
    two_stage.stages = {{MarginLossSpec{LossVariant::NSoftmax, 64.0, 0.0}, 0, 50},
                        {MarginLossSpec{LossVariant::ArcFace, 64.0, 0.5}, 50, 100}};
    auto model_a = make_dense_model(4, 16, 4, 42);
    Trainer trainer_a(model_a, ds.data, two_stage);
    std::vector<double> at_boundary;
    auto hist = trainer_a.run(
        [&](int step, nn::Sequential&) {
            if (step == 49) at_boundary = trainer_a.snapshot_params();
        },
        50);
    ASSERT_FALSE(at_boundary.empty());
    ASSERT_EQ(hist.stage_boundary_accuracy.size(), 1u);
    EXPECT_EQ(hist.stage_boundary_accuracy[0].first, 50);

    TrainConfig ns_only = base_config(50, LossVariant::NSoftmax, 0.0);
    auto model_b = make_dense_model(4, 16, 4, 42);
    Trainer trainer_b(model_b, ds.data, ns_only);
    trainer_b.run();
    auto final_ns = trainer_b.snapshot_params();

    ASSERT_EQ(at_boundary.size(), final_ns.size());
    for (std::size_t i = 0; i < final_ns.size(); ++i)
        EXPECT_EQ(at_boundary[i], final_ns[i]) << "param scalar " << i;
}

TEST(Train, DivergenceFlagHaltsTraining) {
    auto ds = small_dataset();
    auto model = make_dense_model(4, 16, 4, 42);
    TrainConfig cfg = base_config(400, LossVariant::LiArcFace, 0.4);
    cfg.lr_schedule = {{0, 1e8}};  // decay term alone multiplies weights each step
    auto hist = train(model, ds.data, cfg);
    ASSERT_TRUE(hist.diverged);
    EXPECT_GE(hist.divergence_step, 0);
    EXPECT_EQ(hist.steps.back().step, hist.divergence_step);
    EXPECT_TRUE(hist.steps.back().diverged);
    for (std::size_t i = 0; i + 1 < hist.steps.size(); ++i) EXPECT_FALSE(hist.steps[i].diverged);
}

TEST(Train, SoftmaxHeadStageLearns) {
    auto ds = small_dataset();
    auto model = make_dense_model(4, 16, 4, 42);
    TrainConfig cfg = base_config(200, LossVariant::Softmax, 0.0);
    auto hist = train(model, ds.data, cfg);
    EXPECT_FALSE(hist.diverged);
    EXPECT_LT(hist.steps.back().loss, hist.steps.front().loss);
    EXPECT_GT(hist.final_train_accuracy, 0.8);
}

TEST(Train, MeanTargetAngleShrinks) {
    auto ds = small_dataset();
    auto model = make_dense_model(4, 16, 4, 42);
    auto hist = train(model, ds.data, base_config(300, LossVariant::LiArcFace, 0.4));
    EXPECT_LT(hist.steps.back().mean_target_angle, hist.steps.front().mean_target_angle);
}

TEST(Train, ConvergesOnSmallProblem) {
    auto ds = small_dataset();
    auto model = make_dense_model(4, 16, 4, 42);
    auto hist = train(model, ds.data, base_config(400, LossVariant::LiArcFace, 0.4));
    EXPECT_FALSE(hist.diverged);
    EXPECT_GE(hist.final_train_accuracy, 0.9);
}

TEST(Train, DistillWeightZeroMatchesPureClassification) {
    auto ds = small_dataset();
    auto pure = [&] {
        auto model = make_dense_model(4, 16, 4, 42);
        return train(model, ds.data, base_config(100, LossVariant::LiArcFace, 0.4));
    }();
    auto blended = [&] {
        auto model = make_dense_model(4, 16, 4, 42);
        TrainConfig cfg = base_config(100, LossVariant::LiArcFace, 0.4);
        cfg.distill = DistillPlan{DistillSpec{DistillMode::CosineGap, 0.0}, ds.centers_per_sample};
        return train(model, ds.data, cfg);
    }();
    EXPECT_TRUE(histories_equal(pure, blended));
}

TEST(Train, ConfigValidation) {
    auto ds = small_dataset();
    auto model = make_dense_model(4, 16, 4, 42);

    TrainConfig bad = base_config(100, LossVariant::LiArcFace, 0.4);
    bad.stages = {{MarginLossSpec{LossVariant::LiArcFace, 64.0, 0.4}, 0, 50}};  // gap
    EXPECT_THROW(train(model, ds.data, bad), ConfigInvalidError);

    bad = base_config(100, LossVariant::LiArcFace, 0.4);
    bad.stages = {{MarginLossSpec{LossVariant::LiArcFace, 64.0, 0.4}, 0, 60},
                  {MarginLossSpec{LossVariant::NSoftmax, 64.0, 0.0}, 50, 100}};  // overlap
    EXPECT_THROW(train(model, ds.data, bad), ConfigInvalidError);

    bad = base_config(100, LossVariant::LiArcFace, 0.4);
    bad.momentum = 1.0;
    EXPECT_THROW(train(model, ds.data, bad), ConfigInvalidError);

    bad = base_config(100, LossVariant::LiArcFace, 0.4);
    bad.batch_size = ds.data.size() + 1;
    EXPECT_THROW(train(model, ds.data, bad), ConfigInvalidError);

    bad = base_config(100, LossVariant::LiArcFace, 0.4);
    bad.lr_schedule = {{5, 0.1}};
    EXPECT_THROW(train(model, ds.data, bad), ConfigInvalidError);
}

TEST(Train, ConvPathOnGlyphImages) {
    // glyph templates are far apart in pixel space; a small conv net with
    // GDC head separates them quickly
    auto [images, labels] = gen_glyph_images(6, 28, 10, 0.15, 3);
    Dataset ds{std::move(images), std::move(labels), 6};

    Rng rng = Rng(11).split(stream_tag::kInit);
    nn::Sequential model;
    model.add(std::make_unique<nn::Conv2D>(1, 4, 3, 2, rng.split(0)));
    model.add(std::make_unique<nn::BatchNorm>(4));
    model.add(std::make_unique<nn::PReLU>(4));
    model.add(std::make_unique<nn::DepthwiseConv2D>(4, 3, 2, rng.split(1)));
    model.add(std::make_unique<nn::PReLU>(4));
    model.add(std::make_unique<nn::GlobalDepthwiseConv>(4, 7, 7, rng.split(2)));
    model.add(std::make_unique<nn::Flatten>());
    model.add(std::make_unique<nn::Dense>(4, 6, false, rng.split(3), "embedding"));

    TrainConfig cfg = base_config(150, LossVariant::LiArcFace, 0.4, 16.0);
    cfg.batch_size = 16;
    cfg.lr_schedule = {{0, 0.05}};
    auto hist = train(model, ds, cfg);
    EXPECT_FALSE(hist.diverged);
    EXPECT_GE(hist.final_train_accuracy, 0.8);
}

TEST(Probe, LiArcFaceAlwaysPullsTowardCenter) {
    MarginLossSpec li{LossVariant::LiArcFace, 10.0, 0.4};
    for (double t0 : {0.05, 0.5, kPi / 2, 2.5, 3.1}) {
        EXPECT_LT(adversarial_gradient_probe(li, t0), 0.0) << "theta0=" << t0;
    }
}

TEST(Probe, NaiveArcFacePushesAwayPastPiMinusM) {
    MarginLossSpec arc{LossVariant::ArcFace, 64.0, 0.5};
    EXPECT_GT(adversarial_gradient_probe(arc, 3.0), 0.0);
    arc.arcface_clip = true;
    EXPECT_LE(adversarial_gradient_probe(arc, 3.0), 0.0);
}

TEST(Probe, RejectsEndpointAngles) {
    MarginLossSpec li{LossVariant::LiArcFace, 10.0, 0.4};
    EXPECT_THROW(adversarial_gradient_probe(li, 0.0), ConfigInvalidError);
    EXPECT_THROW(adversarial_gradient_probe(li, kPi), ConfigInvalidError);
}

TEST(LrSchedule, PiecewiseConstantLookup) {
    TrainConfig cfg;
    cfg.lr_schedule = {{0, 0.1}, {100, 0.01}, {200, 0.001}};
    EXPECT_EQ(cfg.lr_at(0), 0.1);
    EXPECT_EQ(cfg.lr_at(99), 0.1);
    EXPECT_EQ(cfg.lr_at(100), 0.01);
    EXPECT_EQ(cfg.lr_at(150), 0.01);
    EXPECT_EQ(cfg.lr_at(500), 0.001);
}

#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "gradcheck.hpp"
#include "sphereloss/nn.hpp"
#include "sphereloss/rng.hpp"

using namespace sphereloss;
using namespace sphereloss::nn;

namespace {

Tensor randn(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.flat()) v = scale * rng.next_gaussian();
    return t;
}

// Scalar objective sum(weights .* layer(x)) so every output entry gets a
// distinct upstream gradient.
double weighted_sum(const Tensor& y, const Tensor& weights) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * weights[i];
    return s;
}

// FD-checks input gradient and every parameter gradient of a layer.
void check_layer(Layer& layer, Tensor x, Rng& rng, double tol = 1e-4, bool training = true) {
    Tensor y = layer.forward(x, training);
    Tensor up = randn(y.shape(), rng);
    for (Param* p : layer.params()) p->zero_grad();
    layer.forward(x, training);  // fresh cache for the checked backward
    Tensor gx = layer.backward(up);

    auto objective = [&] { return weighted_sum(layer.forward(x, training), up); };
    auto rep = gradcheck::check(x, gx, objective);
    EXPECT_LT(rep.max_rel_err, tol) << layer.kind() << " input grad, idx " << rep.worst_index
                                    << " a=" << rep.analytic_at_worst
                                    << " fd=" << rep.numeric_at_worst;
    for (Param* p : layer.params()) {
        auto rp = gradcheck::check(p->value, p->grad, objective);
        EXPECT_LT(rp.max_rel_err, tol)
            << layer.kind() << " param " << p->name << ", idx " << rp.worst_index;
    }
}

}  // namespace

TEST(Dense, IdentityWeightsPassThrough) {
    Rng rng(1);
    Dense d(3, 3, false, rng);
    for (Param* p : d.params()) p->value.fill(0.0);
    auto* w = d.params()[0];
    for (int i = 0; i < 3; ++i) w->value(i, i) = 1.0;
    Tensor x = randn({4, 3}, rng);
    Tensor y = d.forward(x, true);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Dense, ZeroUpstreamGivesZeroGradients) {
    Rng rng(2);
    Dense d(3, 5, true, rng);
    Tensor x = randn({2, 3}, rng);
    d.forward(x, true);
    Tensor up({2, 5});
    Tensor gx = d.backward(up);
    for (double v : gx.flat()) EXPECT_EQ(v, 0.0);
    for (Param* p : d.params())
        for (double v : p->grad.flat()) EXPECT_EQ(v, 0.0);
}

TEST(Dense, GradcheckWithBias) {
    Rng rng(3);
    Dense d(4, 3, true, rng);
    check_layer(d, randn({3, 4}, rng), rng);
}

TEST(Dense, RejectsWrongWidth) {
    Rng rng(4);
    Dense d(4, 3, false, rng);
    EXPECT_THROW(d.forward(randn({2, 5}, rng), true), ShapeMismatchError);
}

TEST(Dense, BackwardWithoutForwardIsStale) {
    Rng rng(5);
    Dense d(2, 2, false, rng);
    Tensor up({1, 2});
    EXPECT_THROW(d.backward(up), StaleCacheError);
    Tensor x = randn({1, 2}, rng);
    d.forward(x, true);
    d.backward(up);
    EXPECT_THROW(d.backward(up), StaleCacheError);  // cache consumed
}

TEST(PReLU, Definition) {
    PReLU p(2);
    Tensor x({1, 2});
    x(0, 0) = -4.0;
    x(0, 1) = 2.0;
    Tensor y = p.forward(x, true);
    EXPECT_DOUBLE_EQ(y(0, 0), -1.0);  // slope 0.25
    EXPECT_DOUBLE_EQ(y(0, 1), 2.0);
}

TEST(PReLU, PositiveRegionPassesUpstreamAndZeroSlopeGrad) {
    PReLU p(3);
    Tensor x({2, 3});
    for (auto& v : x.flat()) v = 1.5;
    p.forward(x, true);
    Tensor up({2, 3});
    for (auto& v : up.flat()) v = 0.7;
    Tensor gx = p.backward(up);
    for (double v : gx.flat()) EXPECT_EQ(v, 0.7);
    for (double v : p.params()[0]->grad.flat()) EXPECT_EQ(v, 0.0);
}

TEST(PReLU, Gradcheck) {
    Rng rng(6);
    PReLU p(4);
    check_layer(p, randn({3, 4}, rng), rng);
    PReLU p4(5);
    check_layer(p4, randn({2, 3, 3, 5}, rng), rng);
}

TEST(BatchNorm, NormalizesBatch) {
    Rng rng(7);
    BatchNorm bn(3);
    Tensor x = randn({16, 3}, rng, 5.0);
    Tensor y = bn.forward(x, true);
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0, var = 0.0;
        for (int i = 0; i < 16; ++i) mean += y(i, c);
        mean /= 16;
        for (int i = 0; i < 16; ++i) var += (y(i, c) - mean) * (y(i, c) - mean);
        var /= 16;
        EXPECT_NEAR(mean, 0.0, 1e-12);
        EXPECT_NEAR(var, 1.0, 1e-4);
    }
}

TEST(BatchNorm, GradcheckTrainMode) {
    Rng rng(8);
    BatchNorm bn(3);
    check_layer(bn, randn({6, 3}, rng), rng);
}

TEST(BatchNorm, EvalUsesRunningStats) {
    Rng rng(9);
    BatchNorm bn(2);
    Tensor x = randn({8, 2}, rng, 2.0);
    bn.forward(x, true);
    Tensor a = bn.forward(x, false);
    Tensor b = bn.forward(x, false);  // eval is idempotent w.r.t. state
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Conv2D, GradcheckStride1And2) {
    Rng rng(10);
    Conv2D c1(2, 3, 3, 1, rng);
    check_layer(c1, randn({2, 5, 5, 2}, rng), rng);
    Conv2D c2(2, 3, 3, 2, rng);
    check_layer(c2, randn({1, 6, 6, 2}, rng), rng);
}

TEST(Conv2D, SamePaddingShapes) {
    Rng rng(11);
    Conv2D c(1, 4, 3, 2, rng);
    Tensor y = c.forward(randn({1, 7, 7, 1}, rng), true);
    EXPECT_EQ(y.dim(1), 4);  // ceil(7/2)
    EXPECT_EQ(y.dim(2), 4);
    EXPECT_EQ(y.dim(3), 4);
    Conv2D s1(1, 2, 3, 1, rng);
    Tensor y1 = s1.forward(randn({1, 5, 6, 1}, rng), true);
    EXPECT_EQ(y1.dim(1), 5);
    EXPECT_EQ(y1.dim(2), 6);
}

TEST(DepthwiseConv2D, Gradcheck) {
    Rng rng(12);
    DepthwiseConv2D dw(3, 3, 1, rng);
    check_layer(dw, randn({2, 4, 4, 3}, rng), rng);
    DepthwiseConv2D dw2(2, 3, 2, rng);
    check_layer(dw2, randn({1, 5, 5, 2}, rng), rng);
}

TEST(GlobalDepthwiseConv, AllOnesKernelSumsChannel) {
    Rng rng(13);
    GlobalDepthwiseConv gdc(2, 7, 7, rng);
    gdc.params()[0]->value.fill(1.0);
    Tensor x = randn({1, 7, 7, 2}, rng);
    Tensor y = gdc.forward(x, true);
    for (int c = 0; c < 2; ++c) {
        double want = 0.0;
        for (int i = 0; i < 7; ++i)
            for (int j = 0; j < 7; ++j) want += x(0, i, j, c);
        EXPECT_NEAR(y(0, 0, 0, c), want, 1e-12);
    }
}

TEST(GlobalDepthwiseConv, GradcheckAndShapeGuard) {
    Rng rng(14);
    GlobalDepthwiseConv gdc(3, 4, 4, rng);
    check_layer(gdc, randn({2, 4, 4, 3}, rng), rng);
    EXPECT_THROW(gdc.forward(randn({1, 5, 4, 3}, rng), true), ShapeMismatchError);
}

TEST(Flatten, RoundTrip) {
    Rng rng(15);
    Flatten f;
    Tensor x = randn({2, 3, 3, 4}, rng);
    Tensor y = f.forward(x, true);
    EXPECT_EQ(y.rank(), 2);
    EXPECT_EQ(y.dim(1), 36);
    Tensor gx = f.backward(y);
    EXPECT_EQ(gx.shape(), x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(gx[i], x[i]);
}

TEST(Sequential, ComposedGradcheck) {
    Rng rng(16);
    Sequential model;
    model.add(std::make_unique<Conv2D>(2, 3, 3, 2, rng.split(1)));
    model.add(std::make_unique<PReLU>(3));
    model.add(std::make_unique<Flatten>());
    model.add(std::make_unique<Dense>(3 * 3 * 3, 4, false, rng.split(2), "embedding"));
    check_layer(model, randn({2, 5, 5, 2}, rng), rng);
    EXPECT_EQ(model.named_params().size(), 3u);
    EXPECT_EQ(model.named_params().back().second->group, "embedding");
}

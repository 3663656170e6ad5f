#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "sphereloss/datagen.hpp"

using namespace sphereloss;

TEST(SphereDataset, ZeroNoiseReproducesCenters) {
    SphereDatasetSpec spec{5, 6, 3, 0.0, 11};
    auto ds = gen_sphere_dataset(spec);
    auto centers = gen_sphere_centers(spec);
    for (int row = 0; row < ds.data.size(); ++row) {
        const int c = ds.data.labels[row];
        for (int k = 0; k < spec.dim; ++k)
            EXPECT_NEAR(ds.data.features(row, k), centers[c][k], 1e-12);
    }
}

TEST(SphereDataset, DeterministicPerSeed) {
    SphereDatasetSpec spec{8, 5, 4, 0.2, 99};
    auto a = gen_sphere_dataset(spec);
    auto b = gen_sphere_dataset(spec);
    ASSERT_EQ(a.data.features.size(), b.data.features.size());
    for (std::size_t i = 0; i < a.data.features.size(); ++i)
        EXPECT_EQ(a.data.features[i], b.data.features[i]);
    auto c = gen_sphere_dataset(SphereDatasetSpec{8, 5, 4, 0.2, 100});
    bool any_diff = false;
    for (std::size_t i = 0; i < a.data.features.size(); ++i)
        if (a.data.features[i] != c.data.features[i]) any_diff = true;
    EXPECT_TRUE(any_diff);
}

TEST(SphereDataset, SamplesAreUnitNorm) {
    auto ds = gen_sphere_dataset(SphereDatasetSpec{6, 8, 10, 0.3, 5});
    for (int row = 0; row < ds.data.size(); ++row) {
        double n2 = 0.0;
        for (int k = 0; k < 8; ++k) n2 += ds.data.features(row, k) * ds.data.features(row, k);
        EXPECT_NEAR(std::sqrt(n2), 1.0, 1e-6);
    }
}

TEST(SphereDataset, WithinClassTighterThanBetweenClass) {
    SphereDatasetSpec spec{50, 8, 10, 0.1, 21};
    auto ds = gen_sphere_dataset(spec);
    double within = 0.0, between = 0.0;
    long nw = 0, nb = 0;
    const int n = ds.data.size();
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double c = 0.0;
            for (int k = 0; k < spec.dim; ++k)
                c += ds.data.features(i, k) * ds.data.features(j, k);
            const double ang = std::acos(std::clamp(c, -1.0, 1.0));
            if (ds.data.labels[i] == ds.data.labels[j]) {
                within += ang;
                ++nw;
            } else {
                between += ang;
                ++nb;
            }
        }
    EXPECT_LT(within / nw, between / nb);
}

TEST(SphereDataset, CentersRespectMinimumSeparation) {
    auto centers = gen_sphere_centers(SphereDatasetSpec{40, 8, 1, 0.0, 3});
    for (std::size_t i = 0; i < centers.size(); ++i)
        for (std::size_t j = i + 1; j < centers.size(); ++j)
            EXPECT_GE(angle_between(UnitVector(centers[i]), UnitVector(centers[j])).radians,
                      kMinCenterAngle);
}

TEST(SphereDataset, ValidatesSpec) {
    EXPECT_THROW(gen_sphere_dataset(SphereDatasetSpec{1, 8, 1, 0.0, 0}), ConfigInvalidError);
    EXPECT_THROW(gen_sphere_dataset(SphereDatasetSpec{2, 1, 1, 0.0, 0}), ConfigInvalidError);
    EXPECT_THROW(gen_sphere_dataset(SphereDatasetSpec{2, 2, 0, 0.0, 0}), ConfigInvalidError);
    EXPECT_THROW(gen_sphere_dataset(SphereDatasetSpec{2, 2, 1, -0.1, 0}), ConfigInvalidError);
}

TEST(PairProtocol, CountsAndFoldBalance) {
    auto ds = gen_sphere_dataset(SphereDatasetSpec{10, 4, 6, 0.1, 17});
    auto proto = gen_pair_protocol(ds.data.labels, 10, 10, 10, 17);
    EXPECT_EQ(proto.pairs.size(), 20u);
    std::vector<int> per_fold(10, 0);
    for (const auto& p : proto.pairs) {
        ++per_fold[p.fold];
        EXPECT_EQ(p.same_identity, ds.data.labels[p.index_a] == ds.data.labels[p.index_b]);
    }
    for (int f = 0; f < 10; ++f) EXPECT_EQ(per_fold[f], 2);
    // each fold holds a positive and a negative
    for (int f = 0; f < 10; ++f) {
        bool has_pos = false, has_neg = false;
        for (const auto& p : proto.pairs)
            if (p.fold == f) (p.same_identity ? has_pos : has_neg) = true;
        EXPECT_TRUE(has_pos && has_neg);
    }
}

TEST(PairProtocol, SingleFoldHoldsEverything) {
    auto ds = gen_sphere_dataset(SphereDatasetSpec{6, 4, 5, 0.1, 23});
    auto proto = gen_pair_protocol(ds.data.labels, 8, 12, 1, 5);
    EXPECT_EQ(proto.folds, 1);
    for (const auto& p : proto.pairs) EXPECT_EQ(p.fold, 0);
}

TEST(PairProtocol, NoDuplicatePairs) {
    auto ds = gen_sphere_dataset(SphereDatasetSpec{8, 4, 4, 0.1, 29});
    auto proto = gen_pair_protocol(ds.data.labels, 20, 20, 2, 5);
    std::set<std::pair<int, int>> seen;
    for (const auto& p : proto.pairs) EXPECT_TRUE(seen.emplace(p.index_a, p.index_b).second);
}

TEST(PairProtocol, InsufficientSamplesRejected) {
    std::vector<int> labels{0, 0, 1, 1};
    EXPECT_THROW(gen_pair_protocol(labels, 50, 2, 2, 5), InsufficientSamplesError);
    EXPECT_THROW(gen_pair_protocol(labels, 2, 50, 2, 5), InsufficientSamplesError);
    EXPECT_THROW(gen_pair_protocol(labels, 3, 2, 2, 5), ConfigInvalidError);  // not divisible
}

TEST(GlyphImages, NoiselessSamplesIdenticalWithinClass) {
    auto [images, labels] = gen_glyph_images(4, 28, 3, 0.0, 31);
    for (int c = 0; c < 4; ++c) {
        const int base = c * 3;
        for (int s = 1; s < 3; ++s)
            for (int i = 0; i < 28; ++i)
                for (int j = 0; j < 28; ++j)
                    EXPECT_EQ(images(base + s, i, j, 0), images(base, i, j, 0));
    }
}

TEST(GlyphImages, PixelsStayInUnitInterval) {
    auto [images, labels] = gen_glyph_images(3, 28, 5, 0.8, 37);
    for (double v : images.flat()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(GlyphImages, NearestTemplateClassifiesNoiselessPerfectly) {
    const int classes = 6;
    auto [clean, labels] = gen_glyph_images(classes, 28, 2, 0.0, 41);
    // templates = first sample of each class
    for (int row = 0; row < clean.dim(0); ++row) {
        int best = -1;
        double best_d = 1e300;
        for (int c = 0; c < classes; ++c) {
            const int tmpl_row = c * 2;
            double d = 0.0;
            for (int i = 0; i < 28; ++i)
                for (int j = 0; j < 28; ++j) {
                    const double diff = clean(row, i, j, 0) - clean(tmpl_row, i, j, 0);
                    d += diff * diff;
                }
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        EXPECT_EQ(best, labels[row]);
    }
}

TEST(GlyphImages, ValidatesArguments) {
    EXPECT_THROW(gen_glyph_images(3, 30, 2, 0.0, 1), ConfigInvalidError);
    EXPECT_THROW(gen_glyph_images(1, 28, 2, 0.0, 1), ConfigInvalidError);
}

TEST(Rng, CounterBasedStreamsAreOrderIndependent) {
    Rng a(123);
    Rng b(123);
    (void)b.split(9).next_u64();  // splitting never disturbs the parent
    EXPECT_EQ(a.next_u64(), b.next_u64());
    EXPECT_NE(Rng(1).next_u64(), Rng(2).next_u64());
    EXPECT_NE(Rng(1).split(0).next_u64(), Rng(1).split(1).next_u64());
}

TEST(Rng, GaussianMomentsLookSane) {
    Rng rng(55);
    double sum = 0.0, sum2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double g = rng.next_gaussian();
        sum += g;
        sum2 += g * g;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.01);
    EXPECT_NEAR(sum2 / n, 1.0, 0.02);
}

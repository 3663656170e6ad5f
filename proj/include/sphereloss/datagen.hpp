#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sphereloss/errors.hpp"
#include "sphereloss/rng.hpp"
#include "sphereloss/sphere.hpp"
#include "sphereloss/tensor.hpp"
#include "sphereloss/train.hpp"

namespace sphereloss {

// Identity clusters on the unit hypersphere. Centers and samples come
// from counter-based streams keyed by (seed, class, sample), so the data
// is bit-identical regardless of generation order.
struct SphereDatasetSpec {
    int classes = 2;
    int dim = 2;
    int samples_per_class = 1;
    double noise_sigma = 0.0;  // pre-normalization Gaussian scale
    std::uint64_t seed = 0;

    void validate() const {
        if (classes < 2) throw ConfigInvalidError("need at least 2 classes");
        if (dim < 2) throw ConfigInvalidError("need dim >= 2");
        if (samples_per_class < 1) throw ConfigInvalidError("need samples_per_class >= 1");
        if (noise_sigma < 0.0) throw ConfigInvalidError("noise_sigma must be >= 0");
    }
};

// Minimum pairwise center angle; closer draws are rejected and resampled.
inline constexpr double kMinCenterAngle = 0.1;

namespace detail {

inline std::vector<double> gaussian_vector(Rng rng, int dim) {
    std::vector<double> v(static_cast<std::size_t>(dim));
    for (auto& x : v) x = rng.next_gaussian();
    return v;
}

}  // namespace detail

inline std::vector<std::vector<double>> gen_sphere_centers(const SphereDatasetSpec& spec) {
    spec.validate();
    Rng base = Rng(spec.seed).split(stream_tag::kCenters);
    std::vector<std::vector<double>> centers;
    centers.reserve(static_cast<std::size_t>(spec.classes));
    for (int c = 0; c < spec.classes; ++c) {
        for (std::uint64_t attempt = 0;; ++attempt) {
            auto raw = detail::gaussian_vector(base.split(c).split(attempt), spec.dim);
            UnitVector u = [&] {
                try {
                    return normalize(raw);
                } catch (const ZeroVectorError&) {
                    return normalize(std::vector<double>(spec.dim, 1.0));  // unreachable in practice
                }
            }();
            bool ok = true;
            for (const auto& prev : centers)
                if (angle_between(u, UnitVector(prev)).radians < kMinCenterAngle) ok = false;
            if (ok) {
                centers.push_back(u.components());
                break;
            }
        }
    }
    return centers;
}

// Dataset + the exact center direction of each sample's class (used as a
// distillation teacher).
struct SphereDataset {
    Dataset data;
    Tensor centers_per_sample;  // (N, dim)
};

inline SphereDataset gen_sphere_dataset(const SphereDatasetSpec& spec) {
    spec.validate();
    auto centers = gen_sphere_centers(spec);
    const int total = spec.classes * spec.samples_per_class;
    SphereDataset out;
    out.data.features = Tensor({total, spec.dim});
    out.data.labels.resize(static_cast<std::size_t>(total));
    out.data.num_classes = spec.classes;
    out.centers_per_sample = Tensor({total, spec.dim});
    Rng base = Rng(spec.seed).split(stream_tag::kSamples);
    int row = 0;
    for (int c = 0; c < spec.classes; ++c)
        for (int s = 0; s < spec.samples_per_class; ++s, ++row) {
            std::vector<double> v = centers[static_cast<std::size_t>(c)];
            if (spec.noise_sigma > 0.0) {
                Rng stream = base.split(c).split(s);
                for (auto& x : v) x += spec.noise_sigma * stream.next_gaussian();
            }
            auto u = normalize(v);
            for (int k = 0; k < spec.dim; ++k) {
                out.data.features(row, k) = u[k];
                out.centers_per_sample(row, k) = centers[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)];
            }
            out.data.labels[static_cast<std::size_t>(row)] = c;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Verification pair protocol: same/different-identity pairs dealt into
// folds.

struct Pair {
    int index_a;
    int index_b;
    bool same_identity;
    int fold;
};

struct PairProtocol {
    std::vector<Pair> pairs;
    int folds = 0;
};

inline PairProtocol gen_pair_protocol(const std::vector<int>& labels, int n_pos, int n_neg,
                                      int folds, std::uint64_t seed) {
    if (folds < 1) throw ConfigInvalidError("folds must be >= 1");
    if (n_pos < 1 || n_neg < 1) throw ConfigInvalidError("need positive pair counts");
    if (n_pos % folds != 0 || n_neg % folds != 0)
        throw ConfigInvalidError("pair counts must divide evenly into folds");
    const int n = static_cast<int>(labels.size());
    std::vector<std::pair<int, int>> pos, neg;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            (labels[i] == labels[j] ? pos : neg).emplace_back(i, j);
    if (static_cast<int>(pos.size()) < n_pos || static_cast<int>(neg.size()) < n_neg)
        throw InsufficientSamplesError("not enough candidate pairs for the requested protocol");

    Rng rng = Rng(seed).split(stream_tag::kPairs);
    Rng rp = rng.split(0), rn = rng.split(1);
    shuffle(pos, rp);
    shuffle(neg, rn);

    PairProtocol proto;
    proto.folds = folds;
    proto.pairs.reserve(static_cast<std::size_t>(n_pos + n_neg));
    for (int i = 0; i < n_pos; ++i)
        proto.pairs.push_back({pos[i].first, pos[i].second, true, i % folds});
    for (int i = 0; i < n_neg; ++i)
        proto.pairs.push_back({neg[i].first, neg[i].second, false, i % folds});
    return proto;
}

// ---------------------------------------------------------------------------
// Procedural glyph images for the conv path: one random binary template
// per class plus Gaussian pixel noise, clipped to [0, 1].

inline std::pair<Tensor, std::vector<int>> gen_glyph_images(int classes, int size,
                                                            int samples_per_class,
                                                            double noise_sigma,
                                                            std::uint64_t seed) {
    if (size != 28 && size != 56) throw ConfigInvalidError("glyph size must be 28 or 56");
    if (classes < 2 || samples_per_class < 1)
        throw ConfigInvalidError("need >= 2 classes and >= 1 sample per class");
    if (noise_sigma < 0.0) throw ConfigInvalidError("noise_sigma must be >= 0");

    Rng base = Rng(seed);
    std::vector<Tensor> templates;
    templates.reserve(static_cast<std::size_t>(classes));
    for (int c = 0; c < classes; ++c) {
        Rng t = base.split(stream_tag::kGlyph).split(c);
        Tensor tmpl({size, size});
        for (auto& v : tmpl.flat()) v = t.next_double() < 0.5 ? 0.0 : 1.0;
        templates.push_back(std::move(tmpl));
    }

    const int total = classes * samples_per_class;
    Tensor images({total, size, size, 1});
    std::vector<int> labels(static_cast<std::size_t>(total));
    Rng noise_base = base.split(stream_tag::kSamples);
    int row = 0;
    for (int c = 0; c < classes; ++c)
        for (int s = 0; s < samples_per_class; ++s, ++row) {
            Rng stream = noise_base.split(c).split(s);
            const Tensor& tmpl = templates[static_cast<std::size_t>(c)];
            for (int i = 0; i < size; ++i)
                for (int j = 0; j < size; ++j) {
                    double v = tmpl(i, j);
                    if (noise_sigma > 0.0) v += noise_sigma * stream.next_gaussian();
                    images(row, i, j, 0) = std::clamp(v, 0.0, 1.0);
                }
            labels[static_cast<std::size_t>(row)] = c;
        }
    return {std::move(images), std::move(labels)};
}

}  // namespace sphereloss

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "sphereloss/errors.hpp"
#include "sphereloss/sphere.hpp"
#include "sphereloss/tensor.hpp"

namespace sphereloss {

// Cosine-scored verification pairs with fold assignments.
struct ScoredPairs {
    std::vector<double> scores;  // in [-1, 1]
    std::vector<char> labels;    // 1 = same identity
    std::vector<int> folds;

    void validate() const {
        if (scores.size() != labels.size() || scores.size() != folds.size())
            throw DimensionMismatchError("scored pairs: length mismatch");
        for (double s : scores)
            if (!(s >= -1.0 - 1e-9 && s <= 1.0 + 1e-9))
                throw ConfigInvalidError("pair score outside [-1, 1]");
    }
};

struct VerificationResult {
    double accuracy = 0.0;
    std::vector<double> fold_thresholds;
    std::vector<double> fold_accuracies;
};

namespace detail {

// Midpoints between consecutive sorted unique scores, plus -inf/+inf
// sentinels. Score >= threshold classifies as "same".
inline std::vector<double> threshold_grid(std::vector<double> scores) {
    std::sort(scores.begin(), scores.end());
    scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
    std::vector<double> grid;
    grid.push_back(-std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i + 1 < scores.size(); ++i)
        grid.push_back(scores[i] + 0.5 * (scores[i + 1] - scores[i]));
    grid.push_back(std::numeric_limits<double>::infinity());
    return grid;
}

inline double accuracy_at(const std::vector<double>& scores, const std::vector<char>& labels,
                          double threshold) {
    long correct = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool same = scores[i] >= threshold;
        if (same == static_cast<bool>(labels[i])) ++correct;
    }
    return static_cast<double>(correct) / scores.size();
}

}  // namespace detail

// For each fold, the threshold maximizing accuracy on the remaining folds
// (ties resolve to the lowest threshold) is applied to the held-out fold;
// the result is the mean of the per-fold accuracies.
inline VerificationResult tenfold_verification(const ScoredPairs& pairs) {
    pairs.validate();
    if (pairs.scores.empty()) throw EmptyFoldError("no pairs");
    int n_folds = 0;
    for (int f : pairs.folds) {
        if (f < 0) throw ConfigInvalidError("negative fold id");
        n_folds = std::max(n_folds, f + 1);
    }
    if (n_folds < 2) throw EmptyFoldError("need at least 2 folds");
    std::vector<long> fold_sizes(static_cast<std::size_t>(n_folds), 0);
    for (int f : pairs.folds) ++fold_sizes[static_cast<std::size_t>(f)];
    for (int f = 0; f < n_folds; ++f)
        if (fold_sizes[static_cast<std::size_t>(f)] == 0)
            throw EmptyFoldError("fold " + std::to_string(f) + " is empty");

    VerificationResult result;
    double acc_sum = 0.0;
    for (int k = 0; k < n_folds; ++k) {
        std::vector<double> train_scores, test_scores;
        std::vector<char> train_labels, test_labels;
        for (std::size_t i = 0; i < pairs.scores.size(); ++i) {
            if (pairs.folds[i] == k) {
                test_scores.push_back(pairs.scores[i]);
                test_labels.push_back(pairs.labels[i]);
            } else {
                train_scores.push_back(pairs.scores[i]);
                train_labels.push_back(pairs.labels[i]);
            }
        }
        double best_t = -std::numeric_limits<double>::infinity();
        double best_acc = -1.0;
        for (double t : detail::threshold_grid(train_scores)) {
            const double a = detail::accuracy_at(train_scores, train_labels, t);
            if (a > best_acc) {
                best_acc = a;
                best_t = t;
            }
        }
        const double fold_acc = detail::accuracy_at(test_scores, test_labels, best_t);
        result.fold_thresholds.push_back(best_t);
        result.fold_accuracies.push_back(fold_acc);
        acc_sum += fold_acc;
    }
    result.accuracy = acc_sum / n_folds;
    return result;
}

// True-accept rate at a false-accept ceiling: the threshold is the
// smallest score whose negative fraction at-or-above is <= far; +inf
// (tar = 0) when no score qualifies.
inline double tar_at_far(const std::vector<double>& scores, const std::vector<char>& labels,
                         double far) {
    if (scores.size() != labels.size())
        throw DimensionMismatchError("tar_at_far: length mismatch");
    if (!(far > 0.0 && far <= 1.0)) throw ConfigInvalidError("far must be in (0, 1]");
    long negatives = 0, positives = 0;
    for (char l : labels) (l ? positives : negatives)++;
    if (negatives == 0) throw NoNegativesError("tar_at_far needs at least one negative");

    std::vector<double> uniq = scores;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

    for (double t : uniq) {
        long fa = 0;
        for (std::size_t i = 0; i < scores.size(); ++i)
            if (!labels[i] && scores[i] >= t) ++fa;
        if (static_cast<double>(fa) / negatives <= far) {
            long ta = 0;
            for (std::size_t i = 0; i < scores.size(); ++i)
                if (labels[i] && scores[i] >= t) ++ta;
            return positives == 0 ? 0.0 : static_cast<double>(ta) / positives;
        }
    }
    return 0.0;
}

struct RocPoint {
    double threshold, far, tar;
};

inline std::vector<RocPoint> roc_table(const std::vector<double>& scores,
                                       const std::vector<char>& labels) {
    long negatives = 0, positives = 0;
    for (char l : labels) (l ? positives : negatives)++;
    if (negatives == 0) throw NoNegativesError("roc needs at least one negative");
    std::vector<double> uniq = scores;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    std::vector<RocPoint> table;
    for (double t : uniq) {
        long fa = 0, ta = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] < t) continue;
            (labels[i] ? ta : fa)++;
        }
        table.push_back({t, static_cast<double>(fa) / negatives,
                         positives == 0 ? 0.0 : static_cast<double>(ta) / positives});
    }
    return table;
}

// Rank-1 identification over gallery plus unlabeled distractors. Nearest
// cosine wins; exact ties resolve to the lowest index, with distractors
// indexed after the gallery.
inline double rank1_identification(const Tensor& probes, const std::vector<int>& probe_labels,
                                   const Tensor& gallery, const std::vector<int>& gallery_labels,
                                   const Tensor& distractors) {
    if (probes.rank() != 2 || gallery.rank() != 2)
        throw ShapeMismatchError("rank1: embeddings must be (N, d)");
    const int d = probes.dim(1);
    if (gallery.dim(1) != d || (distractors.size() > 0 && distractors.dim(1) != d))
        throw DimensionMismatchError("rank1: embedding dims differ");
    if (static_cast<int>(probe_labels.size()) != probes.dim(0) ||
        static_cast<int>(gallery_labels.size()) != gallery.dim(0))
        throw DimensionMismatchError("rank1: label counts differ");
    for (int l : probe_labels)
        if (std::find(gallery_labels.begin(), gallery_labels.end(), l) == gallery_labels.end())
            throw MissingGalleryIdentityError("probe identity " + std::to_string(l) +
                                              " absent from gallery");

    auto unit_rows = [d](const Tensor& t) {
        Tensor u = t;
        for (int i = 0; i < t.dim(0); ++i) {
            double n2 = 0.0;
            for (int k = 0; k < d; ++k) n2 += t(i, k) * t(i, k);
            const double n = std::sqrt(n2);
            if (n < kZeroNormEps) throw ZeroVectorError("zero embedding row");
            for (int k = 0; k < d; ++k) u(i, k) = t(i, k) / n;
        }
        return u;
    };
    Tensor up = unit_rows(probes), ug = unit_rows(gallery);
    Tensor ud = distractors.size() > 0 ? unit_rows(distractors) : Tensor();

    const int n_gallery = gallery.dim(0);
    const int n_distract = distractors.size() > 0 ? distractors.dim(0) : 0;
    long correct = 0;
    for (int i = 0; i < probes.dim(0); ++i) {
        int best = -1;
        double best_score = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n_gallery + n_distract; ++j) {
            double c = 0.0;
            for (int k = 0; k < d; ++k)
                c += up(i, k) * (j < n_gallery ? ug(j, k) : ud(j - n_gallery, k));
            if (c > best_score) {
                best_score = c;
                best = j;
            }
        }
        if (best < n_gallery && gallery_labels[static_cast<std::size_t>(best)] == probe_labels[static_cast<std::size_t>(i)])
            ++correct;
    }
    return static_cast<double>(correct) / probes.dim(0);
}

}  // namespace sphereloss

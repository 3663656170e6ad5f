#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "sphereloss/errors.hpp"
#include "sphereloss/sphere.hpp"
#include "sphereloss/tensor.hpp"

namespace sphereloss {

enum class DistillMode { CosineGap, SquaredL2 };

inline std::string to_string(DistillMode m) {
    return m == DistillMode::CosineGap ? "cosine_gap" : "squared_l2";
}

inline DistillMode distill_mode_from_string(const std::string& s) {
    if (s == "cosine_gap") return DistillMode::CosineGap;
    if (s == "squared_l2") return DistillMode::SquaredL2;
    throw ConfigInvalidError("unknown distill mode: " + s);
}

// Embedding-level guidance by a fixed teacher. The teacher is a constant:
// no gradient flows into it.
struct DistillSpec {
    DistillMode mode = DistillMode::CosineGap;
    double weight = 0.0;  // blend coefficient against the classification loss

    void validate() const {
        if (weight < 0.0) throw ConfigInvalidError("distill weight must be >= 0");
    }
};

// CosineGap: mean(1 - cos(student_i, teacher_i)) on normalized rows.
// SquaredL2: mean ||student_i - teacher_i||^2 / d on raw rows.
// Returns (loss, dloss/dstudent) w.r.t. the raw student rows.
inline std::pair<double, Tensor> distill_loss_grad(const DistillSpec& spec, const Tensor& student,
                                                   const Tensor& teacher) {
    spec.validate();
    if (student.rank() != 2 || teacher.rank() != 2 || !student.same_shape(teacher))
        throw DimensionMismatchError("distill: student/teacher shapes differ");
    const int n = student.dim(0), d = student.dim(1);
    Tensor grad({n, d});
    double loss = 0.0;
    if (spec.mode == DistillMode::SquaredL2) {
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < d; ++k) {
                const double diff = student(i, k) - teacher(i, k);
                loss += diff * diff;
                grad(i, k) = 2.0 * diff / (static_cast<double>(n) * d);
            }
        loss /= static_cast<double>(n) * d;
        return {loss, std::move(grad)};
    }
    // CosineGap
    for (int i = 0; i < n; ++i) {
        double sn2 = 0.0, tn2 = 0.0, st = 0.0;
        for (int k = 0; k < d; ++k) {
            sn2 += student(i, k) * student(i, k);
            tn2 += teacher(i, k) * teacher(i, k);
            st += student(i, k) * teacher(i, k);
        }
        const double sn = std::sqrt(sn2), tn = std::sqrt(tn2);
        if (sn < kZeroNormEps) throw ZeroVectorError("distill: zero student row");
        if (tn < kZeroNormEps) throw ZeroVectorError("distill: zero teacher row");
        const double cosv = st / (sn * tn);
        loss += 1.0 - cosv;
        // d cos / d s_k = t_k/(|s||t|) - cos * s_k/|s|^2
        for (int k = 0; k < d; ++k) {
            const double dcos = teacher(i, k) / (sn * tn) - cosv * student(i, k) / sn2;
            grad(i, k) = -dcos / n;
        }
    }
    loss /= n;
    return {loss, std::move(grad)};
}

}  // namespace sphereloss

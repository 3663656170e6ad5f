#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sphereloss/errors.hpp"
#include "sphereloss/sphere.hpp"
#include "sphereloss/tensor.hpp"

namespace sphereloss {

enum class LossVariant {
    Softmax,        // plain linear head + CE; lives in the nn module, not here
    NSoftmax,       // s*cos(theta), no margin
    CosFace,        // s*(cos(theta) - m) on the target
    ArcFace,        // s*cos(theta + m) on the target
    LiArcFace,      // s*(pi - 2(theta + m))/pi on the target, linear in theta
    CombinedMargin  // s*(cos(m1*theta + m2) - m3) on the target
};

inline std::string to_string(LossVariant v) {
    switch (v) {
        case LossVariant::Softmax: return "softmax";
        case LossVariant::NSoftmax: return "n_softmax";
        case LossVariant::CosFace: return "cosface";
        case LossVariant::ArcFace: return "arcface";
        case LossVariant::LiArcFace: return "li_arcface";
        case LossVariant::CombinedMargin: return "combined_margin";
    }
    return "?";
}

inline LossVariant loss_variant_from_string(const std::string& s) {
    if (s == "softmax") return LossVariant::Softmax;
    if (s == "n_softmax") return LossVariant::NSoftmax;
    if (s == "cosface") return LossVariant::CosFace;
    if (s == "arcface") return LossVariant::ArcFace;
    if (s == "li_arcface") return LossVariant::LiArcFace;
    if (s == "combined_margin") return LossVariant::CombinedMargin;
    throw ConfigInvalidError("unknown loss variant: " + s);
}

struct MarginLossSpec {
    LossVariant variant = LossVariant::LiArcFace;
    double s = 64.0;  // logit scale
    double m = 0.0;   // additive margin (radians for angular variants)
    double m1 = 1.0, m2 = 0.0, m3 = 0.0;  // CombinedMargin parameters
    // ArcFace only: false keeps the plain cos(theta+m) target even past
    // theta+m = pi (the form whose non-monotonic tail destabilizes
    // training); true switches to the monotone cos(theta)-m*sin(m)
    // fallback there.
    bool arcface_clip = false;

    void validate() const {
        if (!(s > 0.0)) throw ConfigInvalidError("loss scale s must be > 0");
        switch (variant) {
            case LossVariant::ArcFace:
            case LossVariant::LiArcFace:
                if (m < 0.0 || m >= kPi / 2)
                    throw ConfigInvalidError("angular margin m must be in [0, pi/2)");
                break;
            case LossVariant::CosFace:
                if (m < 0.0 || m >= 1.0)
                    throw ConfigInvalidError("cosine margin m must be in [0, 1)");
                break;
            default:
                break;
        }
    }
};

struct LossOutput {
    double loss = 0.0;           // mean cross-entropy over the batch, nats
    Tensor probabilities;        // N x n, rows sum to 1
    Tensor grad_x;               // dL/dX, N x d (w.r.t. the raw embeddings)
    Tensor grad_w;               // dL/dW, d x n (w.r.t. the raw class centers)
    std::vector<Angle> target_angles;  // one per sample
};

namespace detail {

// Target/non-target logit and its theta-derivative for one angle.
inline void margin_logit_and_slope(const MarginLossSpec& spec, double theta, bool is_target,
                                   double& z, double& dz_dtheta) {
    const double s = spec.s;
    switch (spec.variant) {
        case LossVariant::Softmax:
            throw UnsupportedRoleError(
                "plain softmax has no angular logit; use the linear head in the nn module");
        case LossVariant::NSoftmax:
            z = s * std::cos(theta);
            dz_dtheta = -s * std::sin(theta);
            return;
        case LossVariant::CosFace:
            z = is_target ? s * (std::cos(theta) - spec.m) : s * std::cos(theta);
            dz_dtheta = -s * std::sin(theta);
            return;
        case LossVariant::ArcFace:
            if (!is_target) {
                z = s * std::cos(theta);
                dz_dtheta = -s * std::sin(theta);
            } else if (!spec.arcface_clip || theta + spec.m <= kPi) {
                z = s * std::cos(theta + spec.m);
                dz_dtheta = -s * std::sin(theta + spec.m);
            } else {
                z = s * (std::cos(theta) - spec.m * std::sin(spec.m));
                dz_dtheta = -s * std::sin(theta);
            }
            return;
        case LossVariant::LiArcFace: {
            const double shifted = is_target ? theta + spec.m : theta;
            z = s * (kPi - 2.0 * shifted) / kPi;
            dz_dtheta = -2.0 * s / kPi;
            return;
        }
        case LossVariant::CombinedMargin:
            if (is_target) {
                z = s * (std::cos(spec.m1 * theta + spec.m2) - spec.m3);
                dz_dtheta = -s * spec.m1 * std::sin(spec.m1 * theta + spec.m2);
            } else {
                z = s * std::cos(theta);
                dz_dtheta = -s * std::sin(theta);
            }
            return;
    }
    throw ConfigInvalidError("unhandled loss variant");
}

}  // namespace detail

// Scalar logit transform for one (angle, role) pair.
inline double margin_logit(const MarginLossSpec& spec, double theta, bool is_target) {
    double z, slope;
    detail::margin_logit_and_slope(spec, theta, is_target, z, slope);
    return z;
}

// Forward + backward of the full loss: normalize rows of X and columns of
// W, compute pairwise angles, transform logits, softmax cross-entropy.
// Gradients are with respect to the raw X and W, chained through the
// normalizations and the clamped acos, so they are exact for the
// implemented forward function.
inline LossOutput loss_forward_backward(const MarginLossSpec& spec, const Tensor& x,
                                        const Tensor& w, const std::vector<int>& labels) {
    spec.validate();
    if (spec.variant == LossVariant::Softmax)
        throw UnsupportedRoleError("plain softmax is not an angular loss; see nn::LinearHead");
    if (x.rank() != 2 || w.rank() != 2)
        throw ShapeMismatchError("loss expects X (N x d) and W (d x n)");
    const int batch = x.dim(0), dim = x.dim(1), classes = w.dim(1);
    if (w.dim(0) != dim)
        throw DimensionMismatchError("embedding dim of X and W differ");
    if (batch < 1) throw ShapeMismatchError("empty batch");
    if (dim < 2) throw DimensionMismatchError("embedding dimension must be >= 2");
    if (static_cast<int>(labels.size()) != batch)
        throw ShapeMismatchError("labels size != batch size");
    for (int l : labels)
        if (l < 0 || l >= classes) throw LabelOutOfRangeError("label out of [0, n)");
    if (!x.all_finite() || !w.all_finite())
        throw NonFiniteInputError("non-finite entries in X or W");

    // normalize X rows and W columns
    std::vector<double> xnorm(batch), wnorm(classes);
    Tensor u({batch, dim}), v({dim, classes});
    for (int i = 0; i < batch; ++i) {
        double n2 = 0.0;
        for (int k = 0; k < dim; ++k) n2 += x(i, k) * x(i, k);
        const double n = std::sqrt(n2);
        if (n < kZeroNormEps) throw ZeroVectorError("zero row in X");
        xnorm[i] = n;
        for (int k = 0; k < dim; ++k) u(i, k) = x(i, k) / n;
    }
    for (int j = 0; j < classes; ++j) {
        double n2 = 0.0;
        for (int k = 0; k < dim; ++k) n2 += w(k, j) * w(k, j);
        const double n = std::sqrt(n2);
        if (n < kZeroNormEps) throw ZeroVectorError("zero column in W");
        wnorm[j] = n;
        for (int k = 0; k < dim; ++k) v(k, j) = w(k, j) / n;
    }

    // angles, logits, slopes
    Tensor theta({batch, classes}), dtheta_dc({batch, classes});
    Tensor logits({batch, classes}), slope({batch, classes});
    for (int i = 0; i < batch; ++i)
        for (int j = 0; j < classes; ++j) {
            double c = 0.0;
            for (int k = 0; k < dim; ++k) c += u(i, k) * v(k, j);
            const bool clipped = c <= -1.0 + kCosClamp || c >= 1.0 - kCosClamp;
            auto [ang, dth] = clamped_acos_with_grad(c);
            theta(i, j) = ang.radians;
            // past the clamp the forward is constant in c
            dtheta_dc(i, j) = clipped ? 0.0 : dth;
            double z, dz;
            detail::margin_logit_and_slope(spec, ang.radians, j == labels[i], z, dz);
            logits(i, j) = z;
            slope(i, j) = dz;
        }

    // softmax cross-entropy with max subtraction (s=64 logits overflow
    // naive exponentials)
    LossOutput out;
    out.probabilities = Tensor({batch, classes});
    out.target_angles.reserve(batch);
    double loss_sum = 0.0;
    for (int i = 0; i < batch; ++i) {
        double zmax = logits(i, 0);
        for (int j = 1; j < classes; ++j) zmax = std::max(zmax, logits(i, j));
        double denom = 0.0;
        for (int j = 0; j < classes; ++j) denom += std::exp(logits(i, j) - zmax);
        const double log_denom = std::log(denom);
        for (int j = 0; j < classes; ++j)
            out.probabilities(i, j) = std::exp(logits(i, j) - zmax) / denom;
        loss_sum += -(logits(i, labels[i]) - zmax - log_denom);
        out.target_angles.push_back(Angle{theta(i, labels[i])});
    }
    out.loss = loss_sum / batch;

    // backward: dL/dz -> dL/dtheta -> dL/dc -> dL/du, dL/dv -> dL/dx, dL/dw
    out.grad_x = Tensor({batch, dim});
    out.grad_w = Tensor({dim, classes});
    Tensor grad_u({batch, dim}), grad_v({dim, classes});
    for (int i = 0; i < batch; ++i)
        for (int j = 0; j < classes; ++j) {
            const double dz = (out.probabilities(i, j) - (j == labels[i] ? 1.0 : 0.0)) / batch;
            const double dc = dz * slope(i, j) * dtheta_dc(i, j);
            if (dc == 0.0) continue;
            for (int k = 0; k < dim; ++k) {
                grad_u(i, k) += dc * v(k, j);
                grad_v(k, j) += dc * u(i, k);
            }
        }
    // through the normalizations: d(x/||x||) = (I - u u^T)/||x||
    for (int i = 0; i < batch; ++i) {
        double proj = 0.0;
        for (int k = 0; k < dim; ++k) proj += grad_u(i, k) * u(i, k);
        for (int k = 0; k < dim; ++k)
            out.grad_x(i, k) = (grad_u(i, k) - proj * u(i, k)) / xnorm[i];
    }
    for (int j = 0; j < classes; ++j) {
        double proj = 0.0;
        for (int k = 0; k < dim; ++k) proj += grad_v(k, j) * v(k, j);
        for (int k = 0; k < dim; ++k)
            out.grad_w(k, j) = (grad_v(k, j) - proj * v(k, j)) / wnorm[j];
    }
    return out;
}

// One row of the target-logit curve.
struct LogitCurvePoint {
    double theta;
    double target_logit;
};

// Uniformly samples theta in [0, pi] and evaluates the target-role logit.
inline std::vector<LogitCurvePoint> logit_curve_table(const MarginLossSpec& spec, int n_points) {
    if (n_points < 2) throw ConfigInvalidError("logit curve needs at least 2 points");
    spec.validate();
    std::vector<LogitCurvePoint> rows;
    rows.reserve(static_cast<std::size_t>(n_points));
    for (int k = 0; k < n_points; ++k) {
        const double theta = kPi * k / (n_points - 1);
        rows.push_back({theta, margin_logit(spec, theta, true)});
    }
    return rows;
}

struct OverlapMap {
    double overlap_fraction = 0.0;
    long long overlap_count = 0;
    int grid_n = 0;
    // (theta1, theta2) grid cells claimed by both classes' margin regions
    std::vector<std::pair<double, double>> overlap_cells;
};

// Binary-classification decision-margin scan over a grid_n x grid_n grid
// on [0, pi]^2. A cell is in class 1's margin region when the class-1
// target logit beats the class-2 non-target logit, and symmetrically for
// class 2; the overlap is the intersection.
inline OverlapMap overlap_map(const MarginLossSpec& spec, int grid_n) {
    if (grid_n < 2) throw ConfigInvalidError("overlap map needs grid_n >= 2");
    spec.validate();
    std::vector<double> theta(static_cast<std::size_t>(grid_n));
    std::vector<double> target(static_cast<std::size_t>(grid_n));
    std::vector<double> nontarget(static_cast<std::size_t>(grid_n));
    for (int i = 0; i < grid_n; ++i) {
        theta[i] = kPi * i / (grid_n - 1);
        target[i] = margin_logit(spec, theta[i], true);
        nontarget[i] = margin_logit(spec, theta[i], false);
    }
    OverlapMap out;
    out.grid_n = grid_n;
    for (int i = 0; i < grid_n; ++i)
        for (int j = 0; j < grid_n; ++j) {
            const bool class1 = target[i] > nontarget[j];
            const bool class2 = target[j] > nontarget[i];
            if (class1 && class2) {
                ++out.overlap_count;
                out.overlap_cells.emplace_back(theta[i], theta[j]);
            }
        }
    out.overlap_fraction =
        static_cast<double>(out.overlap_count) / (static_cast<double>(grid_n) * grid_n);
    return out;
}

}  // namespace sphereloss

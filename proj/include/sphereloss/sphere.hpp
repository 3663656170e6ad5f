#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "sphereloss/errors.hpp"

namespace sphereloss {

inline constexpr double kPi = std::numbers::pi;

// Cosines are clamped to [-1+kCosClamp, 1-kCosClamp] before acos so the
// acos derivative stays bounded; the chain rule through acos is singular
// at |c| = 1 and the losses hit that point whenever a sample sits exactly
// on its center.
inline constexpr double kCosClamp = 1e-7;

// Norms below this are treated as zero vectors.
inline constexpr double kZeroNormEps = 1e-12;

// Angle in radians, always in [0, pi].
struct Angle {
    double radians = 0.0;
};

// An L2-normalized vector on the d-sphere, d >= 2.
class UnitVector {
  public:
    explicit UnitVector(std::vector<double> components) : v_(std::move(components)) {
        if (v_.size() < 2) throw DimensionMismatchError("unit vector needs dimension >= 2");
        double n2 = 0.0;
        for (double x : v_) n2 += x * x;
        if (std::abs(std::sqrt(n2) - 1.0) > 1e-6)
            throw ZeroVectorError("vector is not unit length");
    }

    std::size_t dim() const { return v_.size(); }
    double operator[](std::size_t i) const { return v_[i]; }
    const std::vector<double>& components() const { return v_; }

  private:
    std::vector<double> v_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// v / ||v||. Throws ZeroVectorError when ||v|| < 1e-12.
inline UnitVector normalize(const std::vector<double>& v) {
    if (v.size() < 2) throw DimensionMismatchError("normalize needs dimension >= 2");
    double n = norm(v);
    if (n < kZeroNormEps) throw ZeroVectorError("cannot normalize a zero vector");
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return UnitVector(std::move(out));
}

// acos of the clamped cosine plus its derivative -1/sqrt(1-c^2) evaluated
// at the clamped value. The derivative is finite and <= -1 everywhere.
inline std::pair<Angle, double> clamped_acos_with_grad(double c) {
    const double cc = std::clamp(c, -1.0 + kCosClamp, 1.0 - kCosClamp);
    const double theta = std::acos(cc);
    const double grad = -1.0 / std::sqrt(1.0 - cc * cc);
    return {Angle{theta}, grad};
}

// Angle between two unit vectors. Returns exactly 0 or pi only when the
// raw dot product is exactly +/-1; otherwise the cosine is clamped first.
inline Angle angle_between(const UnitVector& x, const UnitVector& w) {
    if (x.dim() != w.dim())
        throw DimensionMismatchError("angle_between: dimension mismatch");
    const double c = dot(x.components(), w.components());
    if (c >= 1.0) return Angle{0.0};
    if (c <= -1.0) return Angle{kPi};
    return clamped_acos_with_grad(c).first;
}

}  // namespace sphereloss

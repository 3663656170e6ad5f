#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "sphereloss/errors.hpp"

namespace sphereloss {

// Dense row-major tensor of doubles, rank 1..4. Small and loop-friendly;
// everything at desk scale, so no BLAS behind it.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        std::size_t n = 1;
        for (int d : shape_) {
            if (d <= 0) throw ShapeMismatchError("tensor dims must be positive");
            n *= static_cast<std::size_t>(d);
        }
        data_.assign(n, 0.0);
    }

    Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

    static Tensor from_vector(std::vector<double> values) {
        Tensor t({static_cast<int>(values.size())});
        t.data_ = std::move(values);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& operator()(int i) { return data_[static_cast<std::size_t>(i)]; }
    double operator()(int i) const { return data_[static_cast<std::size_t>(i)]; }

    double& operator()(int i, int j) {
        return data_[static_cast<std::size_t>(i) * shape_[1] + j];
    }
    double operator()(int i, int j) const {
        return data_[static_cast<std::size_t>(i) * shape_[1] + j];
    }

    double& operator()(int n, int h, int w, int c) {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
    }
    double operator()(int n, int h, int w, int c) const {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
    }

    void fill(double v) { data_.assign(data_.size(), v); }

    Tensor reshaped(std::vector<int> new_shape) const {
        Tensor t;
        t.shape_ = std::move(new_shape);
        std::size_t n = 1;
        for (int d : t.shape_) n *= static_cast<std::size_t>(d);
        if (n != data_.size()) throw ShapeMismatchError("reshape size mismatch");
        t.data_ = data_;
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static std::string shape_str(const std::vector<int>& s) {
        std::string out = "(";
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(s[i]);
        }
        return out + ")";
    }

  private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

// C = A (n x k) * B (k x m)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeMismatchError("matmul: incompatible shapes " + Tensor::shape_str(a.shape()) +
                                 " x " + Tensor::shape_str(b.shape()));
    const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
    Tensor c({n, m});
    for (int i = 0; i < n; ++i)
        for (int l = 0; l < k; ++l) {
            const double av = a(i, l);
            if (av == 0.0) continue;
            for (int j = 0; j < m; ++j) c(i, j) += av * b(l, j);
        }
    return c;
}

inline Tensor transposed(const Tensor& a) {
    if (a.rank() != 2) throw ShapeMismatchError("transpose expects rank-2 tensor");
    Tensor t({a.dim(1), a.dim(0)});
    for (int i = 0; i < a.dim(0); ++i)
        for (int j = 0; j < a.dim(1); ++j) t(j, i) = a(i, j);
    return t;
}

}  // namespace sphereloss

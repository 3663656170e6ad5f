#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "sphereloss/errors.hpp"
#include "sphereloss/rng.hpp"
#include "sphereloss/tensor.hpp"

namespace sphereloss::nn {

// Trainable tensor with a group tag used by per-group weight-decay
// multipliers (wd_mult).
struct Param {
    std::string name;
    std::string group = "body";
    Tensor value;
    Tensor grad;

    void zero_grad() { grad.fill(0.0); }
};

// Forward caches what backward needs; backward consumes the cache, so a
// second backward without a fresh forward is an error.
class Layer {
  public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, bool training) = 0;
    virtual Tensor backward(const Tensor& gy) = 0;
    virtual std::vector<Param*> params() { return {}; }
    virtual std::string kind() const = 0;

  protected:
    void mark_cached() { cached_ = true; }
    void consume_cache() {
        if (!cached_) throw StaleCacheError(kind() + ": backward without matching forward");
        cached_ = false;
    }

  private:
    bool cached_ = false;
};

// N(0, 2/fan_in) init, He-style.
inline void init_he_normal(Tensor& w, int fan_in, Rng rng) {
    const double stddev = std::sqrt(2.0 / fan_in);
    for (auto& v : w.flat()) v = stddev * rng.next_gaussian();
}

// ---------------------------------------------------------------------------
// Dense / LinearHead

class Dense : public Layer {
  public:
    Dense(int in, int out, bool bias, Rng rng, std::string group = "body")
        : in_(in), out_(out), has_bias_(bias) {
        weight_.name = "weight";
        weight_.group = group;
        weight_.value = Tensor({in, out});
        weight_.grad = Tensor({in, out});
        init_he_normal(weight_.value, in, rng);
        if (has_bias_) {
            bias_.name = "bias";
            bias_.group = group;
            bias_.value = Tensor({out});
            bias_.grad = Tensor({out});
        }
    }

    Tensor forward(const Tensor& x, bool) override {
        if (x.rank() != 2 || x.dim(1) != in_)
            throw ShapeMismatchError("Dense: expected (N," + std::to_string(in_) + "), got " +
                                     Tensor::shape_str(x.shape()));
        x_ = x;
        mark_cached();
        Tensor y = matmul(x, weight_.value);
        if (has_bias_)
            for (int i = 0; i < y.dim(0); ++i)
                for (int j = 0; j < out_; ++j) y(i, j) += bias_.value(j);
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        consume_cache();
        const int n = x_.dim(0);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < in_; ++k) {
                const double xv = x_(i, k);
                for (int j = 0; j < out_; ++j) weight_.grad(k, j) += xv * gy(i, j);
            }
        if (has_bias_)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < out_; ++j) bias_.grad(j) += gy(i, j);
        return matmul(gy, transposed(weight_.value));
    }

    std::vector<Param*> params() override {
        if (has_bias_) return {&weight_, &bias_};
        return {&weight_};
    }

    std::string kind() const override { return has_bias_ ? "linear_head" : "dense"; }

    int input_dim() const { return in_; }
    int output_dim() const { return out_; }

  private:
    int in_, out_;
    bool has_bias_;
    Param weight_, bias_;
    Tensor x_;
};

// Bias-enabled linear head: the plain-softmax classifier of the nn stack.
inline std::unique_ptr<Dense> make_linear_head(int in, int classes, Rng rng) {
    return std::make_unique<Dense>(in, classes, true, rng, "head");
}

// ---------------------------------------------------------------------------
// PReLU: one learnable slope per channel (channel = last axis).

class PReLU : public Layer {
  public:
    explicit PReLU(int channels, double init_slope = 0.25) : channels_(channels) {
        slope_.name = "slope";
        slope_.value = Tensor({channels});
        slope_.grad = Tensor({channels});
        slope_.value.fill(init_slope);
    }

    Tensor forward(const Tensor& x, bool) override {
        if (x.shape().back() != channels_)
            throw ShapeMismatchError("PReLU: channel mismatch");
        x_ = x;
        mark_cached();
        Tensor y = x;
        const std::size_t per = x.size() / channels_;
        for (std::size_t i = 0; i < per; ++i)
            for (int c = 0; c < channels_; ++c) {
                auto& v = y[i * channels_ + c];
                if (v <= 0.0) v *= slope_.value(c);
            }
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        consume_cache();
        Tensor gx = gy;
        const std::size_t per = x_.size() / channels_;
        for (std::size_t i = 0; i < per; ++i)
            for (int c = 0; c < channels_; ++c) {
                const std::size_t idx = i * channels_ + c;
                if (x_[idx] <= 0.0) {
                    slope_.grad(c) += gy[idx] * x_[idx];
                    gx[idx] = gy[idx] * slope_.value(c);
                }
            }
        return gx;
    }

    std::vector<Param*> params() override { return {&slope_}; }
    std::string kind() const override { return "prelu"; }

  private:
    int channels_;
    Param slope_;
    Tensor x_;
};

// ---------------------------------------------------------------------------
// BatchNorm over the channel (last) axis; running averages with momentum
// 0.9, epsilon 1e-5.

class BatchNorm : public Layer {
  public:
    explicit BatchNorm(int channels, double momentum = 0.9, double eps = 1e-5)
        : channels_(channels), momentum_(momentum), eps_(eps) {
        gamma_.name = "gamma";
        gamma_.value = Tensor({channels});
        gamma_.grad = Tensor({channels});
        gamma_.value.fill(1.0);
        beta_.name = "beta";
        beta_.value = Tensor({channels});
        beta_.grad = Tensor({channels});
        running_mean_ = Tensor({channels});
        running_var_ = Tensor({channels});
        running_var_.fill(1.0);
    }

    Tensor forward(const Tensor& x, bool training) override {
        if (x.shape().back() != channels_)
            throw ShapeMismatchError("BatchNorm: channel mismatch");
        x_ = x;
        training_ = training;
        const std::size_t rows = x.size() / channels_;
        mean_ = Tensor({channels_});
        var_ = Tensor({channels_});
        if (training) {
            for (std::size_t i = 0; i < rows; ++i)
                for (int c = 0; c < channels_; ++c) mean_(c) += x[i * channels_ + c];
            for (int c = 0; c < channels_; ++c) mean_(c) /= static_cast<double>(rows);
            for (std::size_t i = 0; i < rows; ++i)
                for (int c = 0; c < channels_; ++c) {
                    const double d = x[i * channels_ + c] - mean_(c);
                    var_(c) += d * d;
                }
            for (int c = 0; c < channels_; ++c) var_(c) /= static_cast<double>(rows);
            for (int c = 0; c < channels_; ++c) {
                running_mean_(c) = momentum_ * running_mean_(c) + (1.0 - momentum_) * mean_(c);
                running_var_(c) = momentum_ * running_var_(c) + (1.0 - momentum_) * var_(c);
            }
        } else {
            mean_ = running_mean_;
            var_ = running_var_;
        }
        xhat_ = Tensor(x.shape());
        Tensor y(x.shape());
        for (std::size_t i = 0; i < rows; ++i)
            for (int c = 0; c < channels_; ++c) {
                const std::size_t idx = i * channels_ + c;
                xhat_[idx] = (x[idx] - mean_(c)) / std::sqrt(var_(c) + eps_);
                y[idx] = gamma_.value(c) * xhat_[idx] + beta_.value(c);
            }
        mark_cached();
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        consume_cache();
        const std::size_t rows = x_.size() / channels_;
        Tensor gx(x_.shape());
        for (int c = 0; c < channels_; ++c) {
            double sum_gy = 0.0, sum_gy_xhat = 0.0;
            for (std::size_t i = 0; i < rows; ++i) {
                const std::size_t idx = i * channels_ + c;
                sum_gy += gy[idx];
                sum_gy_xhat += gy[idx] * xhat_[idx];
            }
            gamma_.grad(c) += sum_gy_xhat;
            beta_.grad(c) += sum_gy;
            const double inv_std = 1.0 / std::sqrt(var_(c) + eps_);
            const double scale = gamma_.value(c) * inv_std;
            if (training_) {
                const double m = static_cast<double>(rows);
                for (std::size_t i = 0; i < rows; ++i) {
                    const std::size_t idx = i * channels_ + c;
                    gx[idx] = scale * (gy[idx] - sum_gy / m - xhat_[idx] * sum_gy_xhat / m);
                }
            } else {
                for (std::size_t i = 0; i < rows; ++i) {
                    const std::size_t idx = i * channels_ + c;
                    gx[idx] = scale * gy[idx];
                }
            }
        }
        return gx;
    }

    std::vector<Param*> params() override { return {&gamma_, &beta_}; }
    std::string kind() const override { return "batch_norm"; }

  private:
    int channels_;
    double momentum_, eps_;
    Param gamma_, beta_;
    Tensor running_mean_, running_var_;
    Tensor x_, xhat_, mean_, var_;
    bool training_ = false;
};

// ---------------------------------------------------------------------------
// Convolutions, NHWC layout, SAME zero padding, stride in {1, 2}.
// out = ceil(in / stride); pad_begin = floor(pad_total / 2).

struct ConvGeom {
    int out;
    int pad_begin;
};

inline ConvGeom same_pad_geom(int in, int kernel, int stride) {
    const int out = (in + stride - 1) / stride;
    const int pad_total = std::max((out - 1) * stride + kernel - in, 0);
    return {out, pad_total / 2};
}

class Conv2D : public Layer {
  public:
    Conv2D(int in_c, int out_c, int kernel, int stride, Rng rng, std::string group = "body")
        : in_c_(in_c), out_c_(out_c), k_(kernel), stride_(stride) {
        if (kernel % 2 == 0) throw ConfigInvalidError("conv kernel must be odd");
        if (stride != 1 && stride != 2) throw ConfigInvalidError("conv stride must be 1 or 2");
        weight_.name = "weight";
        weight_.group = std::move(group);
        weight_.value = Tensor({k_, k_, in_c, out_c});
        weight_.grad = Tensor({k_, k_, in_c, out_c});
        init_he_normal(weight_.value, k_ * k_ * in_c, rng);
    }

    Tensor forward(const Tensor& x, bool) override {
        check_input(x);
        x_ = x;
        mark_cached();
        const int n = x.dim(0), h = x.dim(1), w = x.dim(2);
        const auto [oh, ph] = same_pad_geom(h, k_, stride_);
        const auto [ow, pw] = same_pad_geom(w, k_, stride_);
        Tensor y({n, oh, ow, out_c_});
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j)
                    for (int ki = 0; ki < k_; ++ki) {
                        const int src_i = i * stride_ - ph + ki;
                        if (src_i < 0 || src_i >= h) continue;
                        for (int kj = 0; kj < k_; ++kj) {
                            const int src_j = j * stride_ - pw + kj;
                            if (src_j < 0 || src_j >= w) continue;
                            for (int ci = 0; ci < in_c_; ++ci) {
                                const double xv = x_(b, src_i, src_j, ci);
                                for (int co = 0; co < out_c_; ++co)
                                    y(b, i, j, co) += xv * weight_.value(ki, kj, ci, co);
                            }
                        }
                    }
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        consume_cache();
        const int n = x_.dim(0), h = x_.dim(1), w = x_.dim(2);
        const auto [oh, ph] = same_pad_geom(h, k_, stride_);
        const auto [ow, pw] = same_pad_geom(w, k_, stride_);
        Tensor gx(x_.shape());
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j)
                    for (int ki = 0; ki < k_; ++ki) {
                        const int src_i = i * stride_ - ph + ki;
                        if (src_i < 0 || src_i >= h) continue;
                        for (int kj = 0; kj < k_; ++kj) {
                            const int src_j = j * stride_ - pw + kj;
                            if (src_j < 0 || src_j >= w) continue;
                            for (int ci = 0; ci < in_c_; ++ci) {
                                const double xv = x_(b, src_i, src_j, ci);
                                double acc = 0.0;
                                for (int co = 0; co < out_c_; ++co) {
                                    const double g = gy(b, i, j, co);
                                    weight_.grad(ki, kj, ci, co) += xv * g;
                                    acc += g * weight_.value(ki, kj, ci, co);
                                }
                                gx(b, src_i, src_j, ci) += acc;
                            }
                        }
                    }
        return gx;
    }

    std::vector<Param*> params() override { return {&weight_}; }
    std::string kind() const override { return "conv2d"; }

  private:
    void check_input(const Tensor& x) const {
        if (x.rank() != 4 || x.dim(3) != in_c_)
            throw ShapeMismatchError("Conv2D: expected NHWC with C=" + std::to_string(in_c_) +
                                     ", got " + Tensor::shape_str(x.shape()));
    }

    int in_c_, out_c_, k_, stride_;
    Param weight_;
    Tensor x_;
};

class DepthwiseConv2D : public Layer {
  public:
    DepthwiseConv2D(int channels, int kernel, int stride, Rng rng, std::string group = "body")
        : c_(channels), k_(kernel), stride_(stride) {
        if (kernel % 2 == 0) throw ConfigInvalidError("conv kernel must be odd");
        if (stride != 1 && stride != 2) throw ConfigInvalidError("conv stride must be 1 or 2");
        weight_.name = "weight";
        weight_.group = std::move(group);
        weight_.value = Tensor({k_, k_, channels});
        weight_.grad = Tensor({k_, k_, channels});
        init_he_normal(weight_.value, k_ * k_, rng);
    }

    Tensor forward(const Tensor& x, bool) override {
        if (x.rank() != 4 || x.dim(3) != c_)
            throw ShapeMismatchError("DepthwiseConv2D: channel mismatch");
        x_ = x;
        mark_cached();
        const int n = x.dim(0), h = x.dim(1), w = x.dim(2);
        const auto [oh, ph] = same_pad_geom(h, k_, stride_);
        const auto [ow, pw] = same_pad_geom(w, k_, stride_);
        Tensor y({n, oh, ow, c_});
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j)
                    for (int ki = 0; ki < k_; ++ki) {
                        const int src_i = i * stride_ - ph + ki;
                        if (src_i < 0 || src_i >= h) continue;
                        for (int kj = 0; kj < k_; ++kj) {
                            const int src_j = j * stride_ - pw + kj;
                            if (src_j < 0 || src_j >= w) continue;
                            for (int c = 0; c < c_; ++c)
                                y(b, i, j, c) += x_(b, src_i, src_j, c) * weight_.value[(static_cast<std::size_t>(ki) * k_ + kj) * c_ + c];
                        }
                    }
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        consume_cache();
        const int n = x_.dim(0), h = x_.dim(1), w = x_.dim(2);
        const auto [oh, ph] = same_pad_geom(h, k_, stride_);
        const auto [ow, pw] = same_pad_geom(w, k_, stride_);
        Tensor gx(x_.shape());
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j)
                    for (int ki = 0; ki < k_; ++ki) {
                        const int src_i = i * stride_ - ph + ki;
                        if (src_i < 0 || src_i >= h) continue;
                        for (int kj = 0; kj < k_; ++kj) {
                            const int src_j = j * stride_ - pw + kj;
                            if (src_j < 0 || src_j >= w) continue;
                            for (int c = 0; c < c_; ++c) {
                                const std::size_t widx = (static_cast<std::size_t>(ki) * k_ + kj) * c_ + c;
                                const double g = gy(b, i, j, c);
                                weight_.grad[widx] += x_(b, src_i, src_j, c) * g;
                                gx(b, src_i, src_j, c) += g * weight_.value[widx];
                            }
                        }
                    }
        return gx;
    }

    std::vector<Param*> params() override { return {&weight_}; }
    std::string kind() const override { return "depthwise_conv2d"; }

  private:
    int c_, k_, stride_;
    Param weight_;
    Tensor x_;
};

// One full-spatial-extent kernel per channel; output is 1x1xC. This is
// the GDC head that replaces global average pooling.
class GlobalDepthwiseConv : public Layer {
  public:
    GlobalDepthwiseConv(int channels, int h, int w, Rng rng, std::string group = "body")
        : c_(channels), h_(h), w_(w) {
        weight_.name = "weight";
        weight_.group = std::move(group);
        weight_.value = Tensor({h, w, channels});
        weight_.grad = Tensor({h, w, channels});
        init_he_normal(weight_.value, h * w, rng);
    }

    Tensor forward(const Tensor& x, bool) override {
        if (x.rank() != 4 || x.dim(1) != h_ || x.dim(2) != w_ || x.dim(3) != c_)
            throw ShapeMismatchError("GlobalDepthwiseConv: expected (N," + std::to_string(h_) +
                                     "," + std::to_string(w_) + "," + std::to_string(c_) + ")");
        x_ = x;
        mark_cached();
        const int n = x.dim(0);
        Tensor y({n, 1, 1, c_});
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < h_; ++i)
                for (int j = 0; j < w_; ++j)
                    for (int c = 0; c < c_; ++c)
                        y(b, 0, 0, c) += x(b, i, j, c) * weight_.value[(static_cast<std::size_t>(i) * w_ + j) * c_ + c];
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        consume_cache();
        const int n = x_.dim(0);
        Tensor gx(x_.shape());
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < h_; ++i)
                for (int j = 0; j < w_; ++j)
                    for (int c = 0; c < c_; ++c) {
                        const std::size_t widx = (static_cast<std::size_t>(i) * w_ + j) * c_ + c;
                        const double g = gy(b, 0, 0, c);
                        weight_.grad[widx] += x_(b, i, j, c) * g;
                        gx(b, i, j, c) = g * weight_.value[widx];
                    }
        return gx;
    }

    std::vector<Param*> params() override { return {&weight_}; }
    std::string kind() const override { return "global_depthwise_conv"; }

  private:
    int c_, h_, w_;
    Param weight_;
    Tensor x_;
};

class Flatten : public Layer {
  public:
    Tensor forward(const Tensor& x, bool) override {
        in_shape_ = x.shape();
        mark_cached();
        int per = 1;
        for (int i = 1; i < x.rank(); ++i) per *= x.dim(i);
        return x.reshaped({x.dim(0), per});
    }

    Tensor backward(const Tensor& gy) override {
        consume_cache();
        return gy.reshaped(in_shape_);
    }

    std::string kind() const override { return "flatten"; }

  private:
    std::vector<int> in_shape_;
};

// ---------------------------------------------------------------------------
// Sequential container.

class Sequential : public Layer {
  public:
    Sequential() = default;

    void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

    Tensor forward(const Tensor& x, bool training) override {
        Tensor h = x;
        for (auto& l : layers_) h = l->forward(h, training);
        return h;
    }

    Tensor backward(const Tensor& gy) override {
        Tensor g = gy;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
        return g;
    }

    std::vector<Param*> params() override {
        std::vector<Param*> all;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            for (Param* p : layers_[i]->params()) all.push_back(p);
        return all;
    }

    // Unique parameter names: "<index>.<kind>.<param>".
    std::vector<std::pair<std::string, Param*>> named_params() {
        std::vector<std::pair<std::string, Param*>> all;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            for (Param* p : layers_[i]->params())
                all.emplace_back(std::to_string(i) + "." + layers_[i]->kind() + "." + p->name, p);
        return all;
    }

    void zero_grad() {
        for (Param* p : params()) p->zero_grad();
    }

    std::size_t layer_count() const { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_[i]; }

    std::string kind() const override { return "sequential"; }

  private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace sphereloss::nn

#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sphereloss/errors.hpp"
#include "sphereloss/nn.hpp"
#include "sphereloss/rng.hpp"
#include "sphereloss/tensor.hpp"

namespace sphereloss::airface {

enum class Operator {
    Conv3x3,
    DWConv3x3,
    Bottleneck,
    Conv1x1,
    LinearGDConv7x7,
    LinearConv1x1
};

inline std::string to_string(Operator op) {
    switch (op) {
        case Operator::Conv3x3: return "conv3x3";
        case Operator::DWConv3x3: return "dwconv3x3";
        case Operator::Bottleneck: return "bottleneck";
        case Operator::Conv1x1: return "conv1x1";
        case Operator::LinearGDConv7x7: return "linear_gdconv7x7";
        case Operator::LinearConv1x1: return "linear_conv1x1";
    }
    return "?";
}

inline Operator operator_from_string(const std::string& s) {
    if (s == "conv3x3") return Operator::Conv3x3;
    if (s == "dwconv3x3") return Operator::DWConv3x3;
    if (s == "bottleneck") return Operator::Bottleneck;
    if (s == "conv1x1") return Operator::Conv1x1;
    if (s == "linear_gdconv7x7") return Operator::LinearGDConv7x7;
    if (s == "linear_conv1x1") return Operator::LinearConv1x1;
    throw ConfigParseError("unknown operator: " + s);
}

// One table row: operator, expansion t (bottleneck only), output channels
// c, repeat count n, stride s.
struct LayerSpec {
    Operator op;
    int t = 1;
    int c = 1;
    int n = 1;
    int s = 1;

    void validate() const {
        if (t < 1) throw ConfigInvalidError("expansion t must be >= 1");
        if (c < 1) throw ConfigInvalidError("channels must be >= 1");
        if (n < 1) throw ConfigInvalidError("repeat count must be >= 1");
        if (s != 1 && s != 2) throw ConfigInvalidError("stride must be 1 or 2");
    }
};

enum class GateKind { OnePlusTanh, Sigmoid };

inline std::string to_string(GateKind g) {
    return g == GateKind::OnePlusTanh ? "one_plus_tanh" : "sigmoid";
}

inline GateKind gate_from_string(const std::string& s) {
    if (s == "one_plus_tanh") return GateKind::OnePlusTanh;
    if (s == "sigmoid") return GateKind::Sigmoid;
    throw ConfigParseError("unknown gate kind: " + s);
}

struct ArchSpec {
    int input_h = 112, input_w = 112, input_c = 3;
    std::vector<LayerSpec> layers;
    bool use_cbam = true;
    int cbam_reduction = 16;
    GateKind cbam_gate = GateKind::OnePlusTanh;
    // restrict the 1+tanh replacement to the spatial gate (the channel
    // gate then keeps the stock sigmoid); for sensitivity runs
    bool cbam_spatial_only = false;
    bool use_batchnorm = false;

    void validate() const {
        if (input_h < 1 || input_w < 1 || input_c < 1)
            throw ConfigInvalidError("input shape must be positive");
        if (cbam_reduction < 1) throw ConfigInvalidError("cbam reduction must be >= 1");
        if (layers.empty()) throw ConfigInvalidError("architecture has no layers");
        for (const auto& l : layers) l.validate();
    }

    GateKind channel_gate_kind() const {
        return cbam_spatial_only ? GateKind::Sigmoid : cbam_gate;
    }
    GateKind spatial_gate_kind() const { return cbam_gate; }
};

// The eleven-row default network: 112x112x3 in, 512-d embedding out,
// CBAM with the 1+tanh gate inside every bottleneck.
inline ArchSpec build_default_arch() {
    ArchSpec arch;
    arch.layers = {
        {Operator::Conv3x3, 1, 64, 1, 2},     {Operator::DWConv3x3, 1, 64, 1, 1},
        {Operator::Bottleneck, 2, 64, 1, 2},  {Operator::Bottleneck, 2, 64, 9, 1},
        {Operator::Bottleneck, 4, 128, 1, 2}, {Operator::Bottleneck, 2, 128, 16, 1},
        {Operator::Bottleneck, 8, 256, 1, 2}, {Operator::Bottleneck, 2, 256, 6, 1},
        {Operator::Conv1x1, 1, 1024, 1, 1},   {Operator::LinearGDConv7x7, 1, 1024, 1, 1},
        {Operator::LinearConv1x1, 1, 512, 1, 1},
    };
    return arch;
}

struct Shape3 {
    int h, w, c;
    bool operator==(const Shape3&) const = default;
};

inline int strided_out(int in, int stride) { return (in + stride - 1) / stride; }

// Output shape after each layer row; same-padding convention, stride-2
// halves (ceil) the spatial dims.
inline std::vector<Shape3> infer_shapes(const ArchSpec& arch) {
    arch.validate();
    std::vector<Shape3> out;
    Shape3 cur{arch.input_h, arch.input_w, arch.input_c};
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& l = arch.layers[i];
        const std::string at = " (layer " + std::to_string(i) + ")";
        switch (l.op) {
            case Operator::Conv3x3:
            case Operator::Conv1x1:
                cur = {strided_out(cur.h, l.s), strided_out(cur.w, l.s), l.c};
                break;
            case Operator::DWConv3x3:
                if (l.c != cur.c)
                    throw ShapeInferenceError("depthwise conv cannot change channels" + at);
                cur = {strided_out(cur.h, l.s), strided_out(cur.w, l.s), l.c};
                break;
            case Operator::Bottleneck:
                cur = {strided_out(cur.h, l.s), strided_out(cur.w, l.s), l.c};
                // repeats beyond the first keep stride 1 and the channel
                // count, so the shape is already settled
                break;
            case Operator::LinearGDConv7x7:
                if (l.c != cur.c)
                    throw ShapeInferenceError("GDConv cannot change channels" + at);
                cur = {1, 1, l.c};
                break;
            case Operator::LinearConv1x1:
                if (cur.h != 1 || cur.w != 1)
                    throw ShapeInferenceError(
                        "embedding conv expects 1x1 spatial input, got " +
                        std::to_string(cur.h) + "x" + std::to_string(cur.w) + at);
                cur = {1, 1, l.c};
                break;
        }
        out.push_back(cur);
    }
    return out;
}

// ---------------------------------------------------------------------------
// FLOPs / parameter accounting. MACs are counted for convolutions and the
// attention dense layers only (BatchNorm and elementwise gate products are
// ignored); flops_total doubles the MACs to count multiply and add
// separately.

struct FlopsRow {
    std::string name;
    int out_h, out_w, out_c;
    long long params;
    long long macs;
};

struct FlopsReport {
    std::vector<FlopsRow> rows;
    long long params_total = 0;
    long long macs_total = 0;
    long long flops_total = 0;  // 2 * macs_total
};

namespace detail {

inline int cbam_reduced_width(int channels, int reduction) {
    return std::max(1, channels / reduction);
}

struct LayerCost {
    long long params = 0;
    long long macs = 0;
};

inline LayerCost cbam_cost(int channels, int h, int w, int reduction) {
    LayerCost cost;
    const long long cr = cbam_reduced_width(channels, reduction);
    cost.params = 2LL * channels * cr;            // shared two-layer MLP
    cost.macs = 4LL * channels * cr;              // avg and max paths through it
    cost.params += 7LL * 7 * 2;                   // 7x7 spatial conv over [avg, max]
    cost.macs += static_cast<long long>(h) * w * 7 * 7 * 2;
    return cost;
}

}  // namespace detail

inline FlopsReport count_flops_params(const ArchSpec& arch) {
    auto shapes = infer_shapes(arch);
    FlopsReport report;
    Shape3 in{arch.input_h, arch.input_w, arch.input_c};
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& l = arch.layers[i];
        const Shape3 out = shapes[i];
        FlopsRow row{std::to_string(i) + "_" + to_string(l.op), out.h, out.w, out.c, 0, 0};
        const long long spatial_out = static_cast<long long>(out.h) * out.w;
        switch (l.op) {
            case Operator::Conv3x3:
                row.macs = spatial_out * out.c * 9 * in.c;
                row.params = 9LL * in.c * out.c + out.c;  // kernel + PReLU slopes
                break;
            case Operator::DWConv3x3:
                row.macs = spatial_out * out.c * 9;
                row.params = 9LL * out.c + out.c;
                break;
            case Operator::Conv1x1:
                row.macs = spatial_out * out.c * in.c;
                row.params = static_cast<long long>(in.c) * out.c + out.c;
                break;
            case Operator::LinearGDConv7x7:
                row.macs = static_cast<long long>(in.h) * in.w * out.c;
                row.params = static_cast<long long>(in.h) * in.w * out.c;
                break;
            case Operator::LinearConv1x1:
                row.macs = spatial_out * out.c * in.c;
                row.params = static_cast<long long>(in.c) * out.c;
                break;
            case Operator::Bottleneck: {
                int c_in = in.c;
                int h_in = in.h, w_in = in.w;
                for (int rep = 0; rep < l.n; ++rep) {
                    const int stride = rep == 0 ? l.s : 1;
                    const int expanded = l.t * c_in;
                    const int h_out = strided_out(h_in, stride);
                    const int w_out = strided_out(w_in, stride);
                    // expand 1x1 at input resolution
                    row.macs += static_cast<long long>(h_in) * w_in * expanded * c_in;
                    row.params += static_cast<long long>(c_in) * expanded + expanded;
                    // depthwise 3x3 at output resolution
                    row.macs += static_cast<long long>(h_out) * w_out * expanded * 9;
                    row.params += 9LL * expanded + expanded;
                    // linear projection
                    row.macs += static_cast<long long>(h_out) * w_out * l.c * expanded;
                    row.params += static_cast<long long>(expanded) * l.c;
                    if (arch.use_cbam) {
                        auto cost = detail::cbam_cost(l.c, h_out, w_out, arch.cbam_reduction);
                        row.params += cost.params;
                        row.macs += cost.macs;
                    }
                    c_in = l.c;
                    h_in = h_out;
                    w_in = w_out;
                }
                break;
            }
        }
        report.rows.push_back(row);
        report.params_total += row.params;
        report.macs_total += row.macs;
        in = out;
    }
    report.flops_total = 2 * report.macs_total;
    return report;
}

// ---------------------------------------------------------------------------
// Gate activations. 1+tanh maps into the open interval (0, 2); where the
// sum rounds onto an endpoint it is nudged one ulp inward so the
// open-interval contract survives in floating point.

inline double gate_forward(GateKind kind, double x, double& dgate_dx) {
    if (kind == GateKind::Sigmoid) {
        const double g = 1.0 / (1.0 + std::exp(-x));
        dgate_dx = g * (1.0 - g);
        return g;
    }
    const double t = std::tanh(x);
    dgate_dx = 1.0 - t * t;
    double g = 1.0 + t;
    if (g >= 2.0) g = std::nextafter(2.0, 0.0);
    if (g <= 0.0) g = std::nextafter(0.0, 1.0);
    return g;
}

// ---------------------------------------------------------------------------
// CBAM: channel gate from a shared two-layer bottleneck over average- and
// max-pooled descriptors, then a spatial gate from a 7x7 conv over the
// stacked channel-wise average/max maps. output = input * channel_gate *
// spatial_gate.

class CbamBlock : public nn::Layer {
  public:
    CbamBlock(int channels, int reduction, GateKind channel_gate, GateKind spatial_gate, Rng rng)
        : c_(channels),
          cr_(detail::cbam_reduced_width(channels, reduction)),
          channel_gate_(channel_gate),
          spatial_gate_(spatial_gate),
          conv_(2, 1, 7, 1, rng.split(2)) {
        w0_.name = "mlp_w0";
        w0_.value = Tensor({c_, cr_});
        w0_.grad = Tensor({c_, cr_});
        nn::init_he_normal(w0_.value, c_, rng.split(0));
        w1_.name = "mlp_w1";
        w1_.value = Tensor({cr_, c_});
        w1_.grad = Tensor({cr_, c_});
        nn::init_he_normal(w1_.value, cr_, rng.split(1));
    }

    Tensor forward(const Tensor& x, bool training) override {
        if (x.rank() != 4 || x.dim(3) != c_)
            throw ShapeMismatchError("CBAM: expected NHWC with C=" + std::to_string(c_));
        x_ = x;
        const int n = x.dim(0), h = x.dim(1), w = x.dim(2);
        const int hw = h * w;

        // channel descriptors
        avg_c_ = Tensor({n, c_});
        max_c_ = Tensor({n, c_});
        argmax_hw_.assign(static_cast<std::size_t>(n) * c_, 0);
        for (int b = 0; b < n; ++b)
            for (int c = 0; c < c_; ++c) {
                double sum = 0.0, best = x(b, 0, 0, c);
                int best_idx = 0;
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j) {
                        const double v = x(b, i, j, c);
                        sum += v;
                        if (v > best) {
                            best = v;
                            best_idx = i * w + j;
                        }
                    }
                avg_c_(b, c) = sum / hw;
                max_c_(b, c) = best;
                argmax_hw_[static_cast<std::size_t>(b) * c_ + c] = best_idx;
            }

        h0_avg_ = matmul(avg_c_, w0_.value);
        h0_max_ = matmul(max_c_, w0_.value);
        Tensor hr_avg = relu(h0_avg_), hr_max = relu(h0_max_);
        hr_avg_ = hr_avg;
        hr_max_ = hr_max;
        Tensor pre_c = matmul(hr_avg, w1_.value);
        Tensor pm = matmul(hr_max, w1_.value);
        for (std::size_t i = 0; i < pre_c.size(); ++i) pre_c[i] += pm[i];

        gate_c_ = Tensor({n, c_});
        dgate_c_ = Tensor({n, c_});
        for (std::size_t i = 0; i < pre_c.size(); ++i)
            gate_c_[i] = gate_forward(channel_gate_, pre_c[i], dgate_c_[i]);

        x1_ = Tensor(x.shape());
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j)
                    for (int c = 0; c < c_; ++c) x1_(b, i, j, c) = x(b, i, j, c) * gate_c_(b, c);

        // spatial descriptors over the channel-gated map
        Tensor stacked({n, h, w, 2});
        argmax_c_.assign(static_cast<std::size_t>(n) * hw, 0);
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    double sum = 0.0, best = x1_(b, i, j, 0);
                    int best_c = 0;
                    for (int c = 0; c < c_; ++c) {
                        const double v = x1_(b, i, j, c);
                        sum += v;
                        if (v > best) {
                            best = v;
                            best_c = c;
                        }
                    }
                    stacked(b, i, j, 0) = sum / c_;
                    stacked(b, i, j, 1) = best;
                    argmax_c_[(static_cast<std::size_t>(b) * h + i) * w + j] = best_c;
                }

        Tensor pre_s = conv_.forward(stacked, training);
        gate_s_ = Tensor({n, h, w, 1});
        dgate_s_ = Tensor({n, h, w, 1});
        for (std::size_t i = 0; i < pre_s.size(); ++i)
            gate_s_[i] = gate_forward(spatial_gate_, pre_s[i], dgate_s_[i]);

        Tensor y(x.shape());
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j)
                    for (int c = 0; c < c_; ++c)
                        y(b, i, j, c) = x1_(b, i, j, c) * gate_s_(b, i, j, 0);
        mark_cached();
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        consume_cache();
        const int n = x_.dim(0), h = x_.dim(1), w = x_.dim(2);
        const int hw = h * w;

        // through the spatial product y = x1 * gate_s
        Tensor gx1(x_.shape());
        Tensor g_pre_s({n, h, w, 1});
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    double gsum = 0.0;
                    for (int c = 0; c < c_; ++c) {
                        gx1(b, i, j, c) = gy(b, i, j, c) * gate_s_(b, i, j, 0);
                        gsum += gy(b, i, j, c) * x1_(b, i, j, c);
                    }
                    g_pre_s(b, i, j, 0) = gsum * dgate_s_(b, i, j, 0);
                }

        // spatial conv and its stacked avg/max input
        Tensor g_stacked = conv_.backward(g_pre_s);
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    const double ga = g_stacked(b, i, j, 0) / c_;
                    for (int c = 0; c < c_; ++c) gx1(b, i, j, c) += ga;
                    const int bc = argmax_c_[(static_cast<std::size_t>(b) * h + i) * w + j];
                    gx1(b, i, j, bc) += g_stacked(b, i, j, 1);
                }

        // through the channel product x1 = x * gate_c
        Tensor gx(x_.shape());
        Tensor g_pre_c({n, c_});
        for (int b = 0; b < n; ++b)
            for (int c = 0; c < c_; ++c) {
                double gsum = 0.0;
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j) {
                        gx(b, i, j, c) = gx1(b, i, j, c) * gate_c_(b, c);
                        gsum += gx1(b, i, j, c) * x_(b, i, j, c);
                    }
                g_pre_c(b, c) = gsum * dgate_c_(b, c);
            }

        // shared MLP, avg and max paths
        Tensor g_avg({n, c_}), g_max({n, c_});
        mlp_backward(g_pre_c, avg_c_, h0_avg_, hr_avg_, g_avg);
        mlp_backward(g_pre_c, max_c_, h0_max_, hr_max_, g_max);

        for (int b = 0; b < n; ++b)
            for (int c = 0; c < c_; ++c) {
                const double ga = g_avg(b, c) / hw;
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j) gx(b, i, j, c) += ga;
                const int bi = argmax_hw_[static_cast<std::size_t>(b) * c_ + c];
                gx(b, bi / w, bi % w, c) += g_max(b, c);
            }
        return gx;
    }

    std::vector<nn::Param*> params() override {
        auto all = conv_.params();
        all.push_back(&w0_);
        all.push_back(&w1_);
        return all;
    }

    std::string kind() const override { return "cbam"; }

  private:
    static Tensor relu(const Tensor& t) {
        Tensor y = t;
        for (auto& v : y.flat()) v = std::max(v, 0.0);
        return y;
    }

    // d(out)/d(descriptor) for one MLP pass; accumulates weight grads
    void mlp_backward(const Tensor& g_out, const Tensor& d, const Tensor& h0, const Tensor& hr,
                      Tensor& g_d) {
        const int n = g_out.dim(0);
        Tensor g_hr = matmul(g_out, transposed(w1_.value));
        for (int b = 0; b < n; ++b)
            for (int r = 0; r < cr_; ++r) {
                const double hv = hr(b, r);
                for (int c = 0; c < c_; ++c) w1_.grad(r, c) += hv * g_out(b, c);
            }
        Tensor g_h0 = g_hr;
        for (int b = 0; b < n; ++b)
            for (int r = 0; r < cr_; ++r)
                if (h0(b, r) <= 0.0) g_h0(b, r) = 0.0;
        for (int b = 0; b < n; ++b)
            for (int c = 0; c < c_; ++c) {
                const double dv = d(b, c);
                for (int r = 0; r < cr_; ++r) w0_.grad(c, r) += dv * g_h0(b, r);
            }
        Tensor gd = matmul(g_h0, transposed(w0_.value));
        g_d = std::move(gd);
    }

    int c_, cr_;
    GateKind channel_gate_, spatial_gate_;
    nn::Param w0_, w1_;
    nn::Conv2D conv_;
    Tensor x_, x1_;
    Tensor avg_c_, max_c_, h0_avg_, h0_max_, hr_avg_, hr_max_;
    Tensor gate_c_, dgate_c_, gate_s_, dgate_s_;
    std::vector<int> argmax_hw_, argmax_c_;
};

// ---------------------------------------------------------------------------
// Inverted-residual bottleneck: expand 1x1 + PReLU, depthwise 3x3
// (stride) + PReLU, linear 1x1 projection; CBAM on the block output
// before the residual; identity residual iff stride = 1 and C_in = c_out.

class BottleneckBlock : public nn::Layer {
  public:
    BottleneckBlock(int c_in, int t, int c_out, int stride, const ArchSpec& arch, Rng rng)
        : residual_(stride == 1 && c_in == c_out),
          expand_(c_in, t * c_in, 1, 1, rng.split(0)),
          act1_(t * c_in),
          dw_(t * c_in, 3, stride, rng.split(1)),
          act2_(t * c_in),
          project_(t * c_in, c_out, 1, 1, rng.split(2)) {
        if (arch.use_cbam)
            cbam_.emplace(c_out, arch.cbam_reduction, arch.channel_gate_kind(),
                          arch.spatial_gate_kind(), rng.split(3));
        if (arch.use_batchnorm) {
            bn1_.emplace(t * c_in);
            bn2_.emplace(t * c_in);
            bn3_.emplace(c_out);
        }
    }

    Tensor forward(const Tensor& x, bool training) override {
        x_ = x;
        Tensor h = expand_.forward(x, training);
        if (bn1_) h = bn1_->forward(h, training);
        h = act1_.forward(h, training);
        h = dw_.forward(h, training);
        if (bn2_) h = bn2_->forward(h, training);
        h = act2_.forward(h, training);
        h = project_.forward(h, training);
        if (bn3_) h = bn3_->forward(h, training);
        if (cbam_) h = cbam_->forward(h, training);
        if (residual_) {
            if (!h.same_shape(x)) throw ShapeMismatchError("bottleneck residual shape mismatch");
            for (std::size_t i = 0; i < h.size(); ++i) h[i] += x[i];
        }
        mark_cached();
        return h;
    }

    Tensor backward(const Tensor& gy) override {
        consume_cache();
        Tensor g = gy;
        if (cbam_) g = cbam_->backward(g);
        if (bn3_) g = bn3_->backward(g);
        g = project_.backward(g);
        g = act2_.backward(g);
        if (bn2_) g = bn2_->backward(g);
        g = dw_.backward(g);
        g = act1_.backward(g);
        if (bn1_) g = bn1_->backward(g);
        g = expand_.backward(g);
        if (residual_)
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
        return g;
    }

    std::vector<nn::Param*> params() override {
        std::vector<nn::Param*> all;
        auto push = [&](std::vector<nn::Param*> v) {
            all.insert(all.end(), v.begin(), v.end());
        };
        push(expand_.params());
        if (bn1_) push(bn1_->params());
        push(act1_.params());
        push(dw_.params());
        if (bn2_) push(bn2_->params());
        push(act2_.params());
        push(project_.params());
        if (bn3_) push(bn3_->params());
        if (cbam_) push(cbam_->params());
        return all;
    }

    bool has_residual() const { return residual_; }
    std::string kind() const override { return "bottleneck"; }

  private:
    bool residual_;
    nn::Conv2D expand_;
    nn::PReLU act1_;
    nn::DepthwiseConv2D dw_;
    nn::PReLU act2_;
    nn::Conv2D project_;
    std::optional<CbamBlock> cbam_;
    std::optional<nn::BatchNorm> bn1_, bn2_, bn3_;
    Tensor x_;
};

// ---------------------------------------------------------------------------
// Toy instantiation: channels scaled by width_mult (floored, minimum 1),
// GDConv kernel resized to whatever spatial size reaches it.

inline ArchSpec scale_arch(const ArchSpec& arch, double width_mult, int input_size,
                           int input_c = -1) {
    if (!(width_mult > 0.0 && width_mult <= 1.0))
        throw ConfigInvalidError("width_mult must be in (0, 1]");
    if (input_size != 28 && input_size != 56 && input_size != 112)
        throw ConfigInvalidError("input_size must be one of 28, 56, 112");
    ArchSpec scaled = arch;
    scaled.input_h = scaled.input_w = input_size;
    if (input_c > 0) scaled.input_c = input_c;
    for (auto& l : scaled.layers)
        l.c = std::max(1, static_cast<int>(std::floor(l.c * width_mult)));
    return scaled;
}

// Builds a trainable model for a (possibly scaled) arch. The final
// embedding conv carries the "embedding" wd_mult group.
inline nn::Sequential instantiate(const ArchSpec& arch, std::uint64_t seed) {
    arch.validate();
    auto shapes = infer_shapes(arch);
    Rng rng = Rng(seed).split(stream_tag::kInit);
    nn::Sequential model;
    Shape3 in{arch.input_h, arch.input_w, arch.input_c};
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& l = arch.layers[i];
        Rng lrng = rng.split(i);
        switch (l.op) {
            case Operator::Conv3x3:
            case Operator::Conv1x1: {
                const int k = l.op == Operator::Conv3x3 ? 3 : 1;
                model.add(std::make_unique<nn::Conv2D>(in.c, l.c, k, l.s, lrng.split(0)));
                if (arch.use_batchnorm) model.add(std::make_unique<nn::BatchNorm>(l.c));
                model.add(std::make_unique<nn::PReLU>(l.c));
                break;
            }
            case Operator::DWConv3x3:
                model.add(std::make_unique<nn::DepthwiseConv2D>(l.c, 3, l.s, lrng.split(0)));
                if (arch.use_batchnorm) model.add(std::make_unique<nn::BatchNorm>(l.c));
                model.add(std::make_unique<nn::PReLU>(l.c));
                break;
            case Operator::Bottleneck: {
                int c_in = in.c;
                for (int rep = 0; rep < l.n; ++rep) {
                    model.add(std::make_unique<BottleneckBlock>(c_in, l.t, l.c,
                                                                rep == 0 ? l.s : 1, arch,
                                                                lrng.split(rep)));
                    c_in = l.c;
                }
                break;
            }
            case Operator::LinearGDConv7x7:
                model.add(std::make_unique<nn::GlobalDepthwiseConv>(in.c, in.h, in.w,
                                                                    lrng.split(0)));
                break;
            case Operator::LinearConv1x1:
                model.add(std::make_unique<nn::Conv2D>(in.c, l.c, 1, 1, lrng.split(0),
                                                       "embedding"));
                break;
        }
        in = shapes[i];
    }
    model.add(std::make_unique<nn::Flatten>());
    return model;
}

inline nn::Sequential instantiate_toy(const ArchSpec& arch, double width_mult, int input_size,
                                      std::uint64_t seed, int input_c = -1) {
    return instantiate(scale_arch(arch, width_mult, input_size, input_c), seed);
}

inline long long model_param_count(nn::Sequential& model) {
    long long total = 0;
    for (nn::Param* p : model.params()) total += static_cast<long long>(p->value.size());
    return total;
}

}  // namespace sphereloss::airface

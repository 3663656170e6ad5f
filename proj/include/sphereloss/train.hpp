#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sphereloss/distill.hpp"
#include "sphereloss/errors.hpp"
#include "sphereloss/margin_loss.hpp"
#include "sphereloss/nn.hpp"
#include "sphereloss/rng.hpp"
#include "sphereloss/sphere.hpp"
#include "sphereloss/tensor.hpp"

namespace sphereloss {

struct Dataset {
    Tensor features;          // (N, d) or (N, H, W, C)
    std::vector<int> labels;  // in [0, num_classes)
    int num_classes = 0;

    int size() const { return features.dim(0); }
};

struct LrPoint {
    int step;
    double lr;
};

struct LossStage {
    MarginLossSpec spec;
    int begin = 0;  // [begin, end)
    int end = 0;
};

struct DistillPlan {
    DistillSpec spec;
    Tensor teacher;  // one row per dataset sample, aligned with Dataset
};

struct TrainConfig {
    std::vector<LrPoint> lr_schedule{{0, 0.1}};
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::map<std::string, double> wd_mult;  // group -> multiplier; absent = 1
    int batch_size = 64;
    int max_steps = 0;
    std::uint64_t seed = 0;
    std::vector<LossStage> stages;
    std::optional<DistillPlan> distill;

    void validate() const {
        if (momentum < 0.0 || momentum >= 1.0)
            throw ConfigInvalidError("momentum must be in [0, 1)");
        if (weight_decay < 0.0) throw ConfigInvalidError("weight_decay must be >= 0");
        for (const auto& [g, m] : wd_mult)
            if (m < 0.0) throw ConfigInvalidError("wd_mult must be >= 0 (group " + g + ")");
        if (batch_size < 1) throw ConfigInvalidError("batch_size must be >= 1");
        if (max_steps < 0) throw ConfigInvalidError("max_steps must be >= 0");
        if (lr_schedule.empty() || lr_schedule.front().step != 0)
            throw ConfigInvalidError("lr schedule must start at step 0");
        for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
            if (!(lr_schedule[i].lr > 0.0)) throw ConfigInvalidError("all lrs must be > 0");
            if (i && lr_schedule[i].step <= lr_schedule[i - 1].step)
                throw ConfigInvalidError("lr schedule steps must increase");
        }
        if (max_steps > 0) {
            if (stages.empty()) throw ConfigInvalidError("at least one loss stage required");
            int expect = 0;
            for (const auto& st : stages) {
                if (st.begin != expect || st.end <= st.begin)
                    throw ConfigInvalidError("stages must cover [0, max_steps) without overlap");
                st.spec.validate();
                expect = st.end;
            }
            if (expect != max_steps)
                throw ConfigInvalidError("stages must cover [0, max_steps) exactly");
        }
        if (distill) distill->spec.validate();
    }

    double lr_at(int step) const {
        double lr = lr_schedule.front().lr;
        for (const auto& p : lr_schedule)
            if (p.step <= step) lr = p.lr;
        return lr;
    }

    const LossStage& stage_at(int step) const {
        for (const auto& st : stages)
            if (step >= st.begin && step < st.end) return st;
        throw ConfigInvalidError("step outside stage coverage");
    }
};

struct StepRecord {
    int step;
    double loss;
    double train_acc;          // batch accuracy from margin-free logits
    double mean_target_angle;  // radians
    bool diverged;
};

struct TrainHistory {
    std::vector<StepRecord> steps;
    bool diverged = false;
    int divergence_step = -1;  // -1 when training stayed finite
    double final_train_accuracy = 0.0;
    double final_loss = 0.0;
    // (first step of the new stage, full-dataset accuracy entering it)
    std::vector<std::pair<int, double>> stage_boundary_accuracy;
};

// ---------------------------------------------------------------------------
// SGD with momentum and coupled weight decay:
//   g' = g + wd * wd_mult(group) * w;  v = mu * v + g';  w -= lr * v

struct SgdState {
    std::map<std::string, Tensor> velocity;
};

// Applies one update over named params. Returns false (and applies
// nothing) when any gradient is non-finite; the caller decides what a
// divergent step means.
inline bool sgd_step(const std::vector<std::pair<std::string, nn::Param*>>& params, double lr,
                     const TrainConfig& cfg, SgdState& state) {
    for (const auto& [name, p] : params)
        if (!p->grad.all_finite()) return false;
    for (const auto& [name, p] : params) {
        auto it = state.velocity.find(name);
        if (it == state.velocity.end())
            it = state.velocity.emplace(name, Tensor(p->value.shape())).first;
        Tensor& v = it->second;
        double mult = 1.0;
        if (auto g = cfg.wd_mult.find(p->group); g != cfg.wd_mult.end()) mult = g->second;
        const double wd = cfg.weight_decay * mult;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double eff = p->grad[i] + wd * p->value[i];
            v[i] = cfg.momentum * v[i] + eff;
            p->value[i] -= lr * v[i];
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Plain softmax cross-entropy on unnormalized logits (the Softmax stage).

inline std::pair<double, Tensor> softmax_ce(const Tensor& logits, const std::vector<int>& labels,
                                            Tensor* probs_out = nullptr) {
    const int n = logits.dim(0), classes = logits.dim(1);
    Tensor grad({n, classes});
    Tensor probs({n, classes});
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        double zmax = logits(i, 0);
        for (int j = 1; j < classes; ++j) zmax = std::max(zmax, logits(i, j));
        double denom = 0.0;
        for (int j = 0; j < classes; ++j) denom += std::exp(logits(i, j) - zmax);
        for (int j = 0; j < classes; ++j) probs(i, j) = std::exp(logits(i, j) - zmax) / denom;
        loss += -(logits(i, labels[i]) - zmax - std::log(denom));
        for (int j = 0; j < classes; ++j)
            grad(i, j) = (probs(i, j) - (j == labels[i] ? 1.0 : 0.0)) / n;
    }
    if (probs_out) *probs_out = std::move(probs);
    return {loss / n, std::move(grad)};
}

// ---------------------------------------------------------------------------
// Trainer. Owns the class centers (shared across stages) and, when a
// Softmax stage is configured, the bias-enabled linear head.

using StepHook = std::function<void(int completed_step, nn::Sequential& model)>;

namespace detail {

// Margin-free accuracy and mean target angle against normalized centers.
inline void cosine_scores(const Tensor& emb, const Tensor& centers,
                          const std::vector<int>& labels, double& acc,
                          double& mean_target_angle) {
    const int n = emb.dim(0), d = emb.dim(1), classes = centers.dim(1);
    Tensor vc({d, classes});
    for (int j = 0; j < classes; ++j) {
        double n2 = 0.0;
        for (int k = 0; k < d; ++k) n2 += centers(k, j) * centers(k, j);
        const double nn = std::sqrt(n2);
        for (int k = 0; k < d; ++k) vc(k, j) = centers(k, j) / nn;
    }
    int correct = 0;
    double angle_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        double n2 = 0.0;
        for (int k = 0; k < d; ++k) n2 += emb(i, k) * emb(i, k);
        const double en = std::sqrt(n2);
        int best = 0;
        double best_cos = -2.0;
        double target_cos = 0.0;
        for (int j = 0; j < classes; ++j) {
            double c = 0.0;
            for (int k = 0; k < d; ++k) c += (emb(i, k) / en) * vc(k, j);
            if (c > best_cos) {
                best_cos = c;
                best = j;
            }
            if (j == labels[i]) target_cos = c;
        }
        if (best == labels[i]) ++correct;
        angle_sum += clamped_acos_with_grad(target_cos).first.radians;
    }
    acc = static_cast<double>(correct) / n;
    mean_target_angle = angle_sum / n;
}

inline Tensor gather_rows(const Tensor& features, const std::vector<int>& idx) {
    std::vector<int> shape = features.shape();
    shape[0] = static_cast<int>(idx.size());
    Tensor out(shape);
    std::size_t per = features.size() / features.dim(0);
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy_n(features.data() + idx[r] * per, per, out.data() + r * per);
    return out;
}

}  // namespace detail

class Trainer {
  public:
    Trainer(nn::Sequential& model, const Dataset& data, const TrainConfig& cfg)
        : model_(model), data_(data), cfg_(cfg) {
        cfg_.validate();
        if (data_.size() < 1) throw ConfigInvalidError("dataset is empty");
        if (static_cast<int>(data_.labels.size()) != data_.size())
            throw ConfigInvalidError("labels size != dataset size");
        if (cfg_.distill && cfg_.distill->teacher.dim(0) != data_.size())
            throw ConfigInvalidError("distill teacher must align with the dataset");
        if (cfg_.batch_size > data_.size())
            throw ConfigInvalidError("batch_size exceeds dataset size");
        embed_dim_ = probe_embed_dim();
        init_heads();
    }

    TrainHistory run(const StepHook& hook = {}, int hook_every = 0) {
        TrainHistory hist;
        std::vector<int> order(static_cast<std::size_t>(data_.size()));
        std::iota(order.begin(), order.end(), 0);
        std::size_t cursor = order.size();  // forces a shuffle on first use
        std::uint64_t epoch = 0;

        const LossStage* prev_stage = nullptr;
        for (int step = 0; step < cfg_.max_steps; ++step) {
            const LossStage& stage = cfg_.stage_at(step);
            if (prev_stage && &stage != prev_stage)
                hist.stage_boundary_accuracy.emplace_back(step, full_dataset_accuracy(stage));
            prev_stage = &stage;

            // next batch of indices, reshuffling per epoch
            std::vector<int> batch_idx;
            batch_idx.reserve(static_cast<std::size_t>(cfg_.batch_size));
            if (cursor + cfg_.batch_size > order.size()) {
                Rng shuffle_rng = Rng(cfg_.seed).split(stream_tag::kShuffle).split(epoch++);
                shuffle(order, shuffle_rng);
                cursor = 0;
            }
            for (int b = 0; b < cfg_.batch_size; ++b)
                batch_idx.push_back(order[cursor + b]);
            cursor += static_cast<std::size_t>(cfg_.batch_size);

            Tensor xb = detail::gather_rows(data_.features, batch_idx);
            std::vector<int> yb(batch_idx.size());
            for (std::size_t i = 0; i < batch_idx.size(); ++i) yb[i] = data_.labels[batch_idx[i]];

            model_.zero_grad();
            if (head_)
                for (nn::Param* p : head_->params()) p->zero_grad();

            Tensor emb = model_.forward(xb, true);
            const double nan = std::numeric_limits<double>::quiet_NaN();
            double loss = nan, acc = nan, mean_angle = nan;
            Tensor grad_emb;
            // exploded weights surface as non-finite embeddings; that is
            // the divergence the history flags, not a crash
            bool bad = !emb.all_finite();
            if (!bad) {
                if (stage.spec.variant == LossVariant::Softmax) {
                    Tensor logits = head_->forward(emb, true);
                    auto [l, gl] = softmax_ce(logits, yb);
                    loss = l;
                    grad_emb = head_->backward(gl);
                    detail::cosine_scores(emb, head_weight_as_centers(), yb, acc, mean_angle);
                } else {
                    auto out = loss_forward_backward(stage.spec, emb, centers_.value, yb);
                    loss = out.loss;
                    grad_emb = std::move(out.grad_x);
                    centers_.grad = std::move(out.grad_w);
                    detail::cosine_scores(emb, centers_.value, yb, acc, mean_angle);
                }
                if (cfg_.distill) {
                    Tensor teacher_b = detail::gather_rows(cfg_.distill->teacher, batch_idx);
                    auto [dl, dg] = distill_loss_grad(cfg_.distill->spec, emb, teacher_b);
                    loss += cfg_.distill->spec.weight * dl;
                    for (std::size_t i = 0; i < grad_emb.size(); ++i)
                        grad_emb[i] += cfg_.distill->spec.weight * dg[i];
                }
                bad = !std::isfinite(loss) || !grad_emb.all_finite();
            }
            if (!bad) {
                model_.backward(grad_emb);
                auto params = trainable_params(stage);
                bad = !sgd_step(params, cfg_.lr_at(step), cfg_, state_);
            }
            hist.steps.push_back({step, loss, acc, mean_angle, bad});
            if (bad) {
                hist.diverged = true;
                hist.divergence_step = step;
                break;
            }
            if (hook && hook_every > 0 && (step + 1) % hook_every == 0) hook(step, model_);
        }

        if (!hist.steps.empty()) hist.final_loss = hist.steps.back().loss;
        if (!hist.diverged && cfg_.max_steps > 0)
            hist.final_train_accuracy = full_dataset_accuracy(cfg_.stages.back());
        return hist;
    }

    const Tensor& centers() const { return centers_.value; }
    int embed_dim() const { return embed_dim_; }

    // Flattened copies of every trainable value (model + heads), for
    // bit-exact boundary checks.
    std::vector<double> snapshot_params() {
        std::vector<double> out;
        for (const auto& [name, p] : all_named_params())
            out.insert(out.end(), p->value.flat().begin(), p->value.flat().end());
        return out;
    }

    double full_dataset_accuracy(const LossStage& stage) {
        Tensor emb = model_.forward(data_.features, false);
        double acc, angle;
        if (stage.spec.variant == LossVariant::Softmax)
            detail::cosine_scores(emb, head_weight_as_centers(), data_.labels, acc, angle);
        else
            detail::cosine_scores(emb, centers_.value, data_.labels, acc, angle);
        return acc;
    }

  private:
    int probe_embed_dim() {
        // run one sample through a uniquely-shaped forward to learn the
        // embedding width
        std::vector<int> idx{0};
        Tensor x0 = detail::gather_rows(data_.features, idx);
        Tensor e = model_.forward(x0, false);
        if (e.rank() != 2) throw ConfigInvalidError("model must emit (N, d) embeddings");
        return e.dim(1);
    }

    void init_heads() {
        Rng init = Rng(cfg_.seed).split(stream_tag::kInit);
        // class centers: unit-variance normal, then column-normalized
        centers_.name = "weight";
        centers_.group = "centers";
        centers_.value = Tensor({embed_dim_, data_.num_classes});
        centers_.grad = Tensor({embed_dim_, data_.num_classes});
        Rng crng = init.split(0);
        for (auto& v : centers_.value.flat()) v = crng.next_gaussian();
        for (int j = 0; j < data_.num_classes; ++j) {
            double n2 = 0.0;
            for (int k = 0; k < embed_dim_; ++k) n2 += centers_.value(k, j) * centers_.value(k, j);
            const double n = std::sqrt(n2);
            for (int k = 0; k < embed_dim_; ++k) centers_.value(k, j) /= n;
        }
        bool wants_head = false;
        for (const auto& st : cfg_.stages)
            if (st.spec.variant == LossVariant::Softmax) wants_head = true;
        if (wants_head)
            head_ = nn::make_linear_head(embed_dim_, data_.num_classes, init.split(1));
    }

    Tensor head_weight_as_centers() {
        // the head's weight is (d, n) just like the centers matrix
        return head_->params()[0]->value;
    }

    std::vector<std::pair<std::string, nn::Param*>> all_named_params() {
        auto params = model_.named_params();
        params.emplace_back("centers.weight", &centers_);
        if (head_)
            for (nn::Param* p : head_->params())
                params.emplace_back("head." + p->name, p);
        return params;
    }

    std::vector<std::pair<std::string, nn::Param*>> trainable_params(const LossStage& stage) {
        auto params = model_.named_params();
        if (stage.spec.variant == LossVariant::Softmax) {
            for (nn::Param* p : head_->params()) params.emplace_back("head." + p->name, p);
        } else {
            params.emplace_back("centers.weight", &centers_);
        }
        return params;
    }

    nn::Sequential& model_;
    const Dataset& data_;
    TrainConfig cfg_;
    int embed_dim_ = 0;
    nn::Param centers_;
    std::unique_ptr<nn::Dense> head_;
    SgdState state_;
};

inline TrainHistory train(nn::Sequential& model, const Dataset& data, const TrainConfig& cfg,
                          const StepHook& hook = {}, int hook_every = 0) {
    Trainer t(model, data, cfg);
    return t.run(hook, hook_every);
}

// ---------------------------------------------------------------------------
// Divergence-mechanism probe. Builds a 2-class instance in the plane with
// antipodal centers, places the sample at angle theta0 from its own
// center, takes one plain gradient step on the embedding only, and
// returns the change of that angle. The default step is small so the sign
// of the change reflects the sign of the loss gradient in angle space.

inline double adversarial_gradient_probe(const MarginLossSpec& spec, double theta0,
                                         double lr = 1e-3) {
    if (!(theta0 > 0.0 && theta0 < kPi))
        throw ConfigInvalidError("theta0 must lie strictly inside (0, pi)");
    Tensor x({1, 2});
    x(0, 0) = std::cos(theta0);
    x(0, 1) = std::sin(theta0);
    Tensor w({2, 2});
    w(0, 0) = 1.0;
    w(1, 0) = 0.0;
    w(0, 1) = -1.0;
    w(1, 1) = 0.0;
    auto out = loss_forward_backward(spec, x, w, {0});
    std::vector<double> moved{x(0, 0) - lr * out.grad_x(0, 0), x(0, 1) - lr * out.grad_x(0, 1)};
    auto u = normalize(moved);
    auto c0 = normalize({1.0, 0.0});
    return angle_between(u, c0).radians - theta0;
}

// Builds the small dense model used by the loss-comparison experiments:
// Dense(in, hidden) + PReLU + Dense(hidden, out). The embedding-producing
// layer carries the "embedding" group tag for wd_mult.
inline nn::Sequential make_dense_model(int in, int hidden, int out, std::uint64_t seed) {
    Rng rng = Rng(seed).split(stream_tag::kInit);
    nn::Sequential model;
    model.add(std::make_unique<nn::Dense>(in, hidden, false, rng.split(10)));
    model.add(std::make_unique<nn::PReLU>(hidden));
    model.add(std::make_unique<nn::Dense>(hidden, out, false, rng.split(11), "embedding"));
    return model;
}

}  // namespace sphereloss

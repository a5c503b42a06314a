#pragma once

// Optimization: cross-entropy objective, Adam with selectively applied
// weight decay, and the mini-batch training loop.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "temgnet/errors.hpp"
#include "temgnet/model.hpp"
#include "temgnet/rng.hpp"
#include "temgnet/segmentation.hpp"
#include "temgnet/tensor.hpp"

namespace temgnet {

struct TrainConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.001;
    bool decoupled_decay = false;  // true applies decay directly to the weights instead of the gradient
    int batch_size = 512;
    int epochs = 100;
    std::uint64_t shuffle_seed = 0;
    // Stops after the first epoch whose training accuracy reaches this
    // value; 0 disables the shortcut.
    double early_stop_train_accuracy = 0.0;

    void validate() const {
        if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
        if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
            throw ConfigError("betas must lie strictly inside (0, 1)");
        if (eps <= 0.0) throw ConfigError("eps must be positive");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (epochs < 0) throw ConfigError("epochs must be nonnegative");
        if (early_stop_train_accuracy < 0.0 || early_stop_train_accuracy > 1.0)
            throw ConfigError("early_stop_train_accuracy must lie in [0, 1]");
    }
};

// ---------------------------------------------------------------------------
// cross-entropy
// ---------------------------------------------------------------------------

// -log softmax(logits)[label] in the log-sum-exp form, as one fused taped
// operation whose backward rule is softmax(logits) minus the one-hot
// target. The label is the 1-based class id carried by dataset windows.
inline Tensor cross_entropy(const Tensor& logits, int label) {
    const std::int64_t c = static_cast<std::int64_t>(logits.numel());
    if (logits.ndim() > 2 || (logits.ndim() == 2 && logits.shape()[0] != 1))
        throw ShapeError("cross_entropy: logits must be a single row, got " +
                         shape_str(logits.shape()));
    if (label < 1 || label > c)
        throw ContractError("cross_entropy: label " + std::to_string(label) +
                            " outside 1.." + std::to_string(c));
    const double* p = logits.data();
    double mx = p[0];
    for (std::int64_t j = 1; j < c; ++j)
        if (p[j] > mx) mx = p[j];
    if (!std::isfinite(mx)) throw DomainError("cross_entropy: non-finite logits");
    double sum = 0.0;
    for (std::int64_t j = 0; j < c; ++j) sum += std::exp(p[j] - mx);
    const double lse = mx + std::log(sum);
    Tensor loss = detail::make_result("cross_entropy", {1}, {lse - p[label - 1]});
    if (detail::tape_wanted({&logits})) {
        detail::attach(loss, {logits}, [nl = logits.node(), label, c](TensorNode& self) {
            nl->ensure_grad();
            const double g = self.grad[0];
            const double* lp = nl->data.data();
            double m2 = lp[0];
            for (std::int64_t j = 1; j < c; ++j)
                if (lp[j] > m2) m2 = lp[j];
            double denom = 0.0;
            for (std::int64_t j = 0; j < c; ++j) denom += std::exp(lp[j] - m2);
            for (std::int64_t j = 0; j < c; ++j)
                nl->grad[static_cast<std::size_t>(j)] += g * std::exp(lp[j] - m2) / denom;
            nl->grad[static_cast<std::size_t>(label - 1)] -= g;
        });
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

namespace detail {

// One Adam update over a flat parameter vector. Decay (when enabled for
// this tensor) is folded into the gradient before the moment updates;
// the decoupled variant shrinks the weights directly instead.
inline void adam_update(std::vector<double>& theta, const std::vector<double>& grad,
                        std::vector<double>& m, std::vector<double>& v, std::uint64_t t,
                        const TrainConfig& cfg, bool decay_this) {
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    const double wd = decay_this ? cfg.weight_decay : 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        double g = grad[i];
        if (!cfg.decoupled_decay) g += wd * theta[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        theta[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
        if (cfg.decoupled_decay) theta[i] -= cfg.learning_rate * wd * theta[i];
    }
}

// Normalization parameters, biases, the class token, and the position
// table are exempt from decay.
inline bool decays(const std::string& name) {
    return !(name.ends_with("gamma") || name.ends_with("beta") || name.ends_with("bias") ||
             name.ends_with("_b") || name.ends_with("b1") || name.ends_with("b2") ||
             name == "cls_token" || name == "pos_table");
}

}  // namespace detail

class AdamOptimizer {
public:
    AdamOptimizer(TemgNet& model, TrainConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        model.for_each_param([&](const std::string& name, Tensor& t) {
            m_.emplace_back(t.numel(), 0.0);
            v_.emplace_back(t.numel(), 0.0);
            decays_.push_back(detail::decays(name));
        });
    }

    std::uint64_t steps() const { return t_; }

    // Applies one update from the accumulated gradients, scaled by
    // grad_scale (1/batch for mean-reduced losses). Rejects non-finite
    // gradients before touching any parameter or moment.
    void step(TemgNet& model, double grad_scale = 1.0) {
        model.for_each_param([&](const std::string& name, Tensor& t) {
            if (!t.has_grad())
                throw ContractError("adam step: parameter " + name + " has no gradient");
            for (double g : t.grad())
                if (!std::isfinite(g))
                    throw DomainError("adam step: non-finite gradient in " + name +
                                      "; step aborted");
        });
        ++t_;
        std::size_t slot = 0;
        model.for_each_param([&](const std::string&, Tensor& t) {
            grad_buf_ = t.grad();
            if (grad_scale != 1.0)
                for (double& g : grad_buf_) g *= grad_scale;
            detail::adam_update(t.values(), grad_buf_, m_[slot], v_[slot], t_, cfg_,
                                decays_[slot]);
            ++slot;
        });
    }

private:
    TrainConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::vector<bool> decays_;
    std::vector<double> grad_buf_;
    std::uint64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct EpochStats {
    int epoch = 0;  // 1-based
    double mean_loss = 0.0;
    double train_accuracy = 0.0;
    double wall_seconds = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> trace;
    TemgNet best_model;   // parameters after the lowest-mean-loss epoch
    int best_epoch = 0;   // 1-based; 0 when no epoch ran
};

// Mini-batch training. Shuffling draws from a stream seeded only by the
// config, the last partial batch is kept, and per-window gradients are
// averaged into one step per batch. The model is updated in place; the
// result carries the best checkpoint by mean epoch loss.
inline TrainResult train(TemgNet& model, const SegmentDataset& ds, const TrainConfig& cfg,
                         const std::function<void(const EpochStats&)>& on_epoch = {}) {
    cfg.validate();
    model.config.validate();
    if (ds.empty()) throw ContractError("train: dataset is empty");
    for (const Window& w : ds.windows)
        if (w.label < 1 || w.label > model.config.n_classes)
            throw ContractError("train: window label " + std::to_string(w.label) +
                                " outside 1.." + std::to_string(model.config.n_classes));

    TrainResult result;
    result.best_model = clone_model(model);
    AdamOptimizer opt(model, cfg);
    Rng shuffle_rng(cfg.shuffle_seed);
    Rng dropout_rng(cfg.shuffle_seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    double best_loss = 0.0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t correct = 0;

        for (std::size_t batch_start = 0; batch_start < order.size();
             batch_start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t batch_end =
                std::min(order.size(), batch_start + static_cast<std::size_t>(cfg.batch_size));
            model.zero_grads();
            for (std::size_t k = batch_start; k < batch_end; ++k) {
                const Window& w = ds.windows[order[k]];
                Tensor x = ds.window_tensor(order[k]);
                Tensor logits = forward(model, x, &dropout_rng);
                Tensor loss = cross_entropy(logits, w.label);
                loss_sum += loss.at(0);
                backward(loss);

                std::int64_t arg = 0;
                for (std::int64_t j = 1; j < logits.cols(); ++j)
                    if (logits.at(0, j) > logits.at(0, arg)) arg = j;
                if (arg + 1 == w.label) ++correct;
            }
            opt.step(model, 1.0 / static_cast<double>(batch_end - batch_start));
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.mean_loss = loss_sum / static_cast<double>(ds.size());
        stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
        stats.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.trace.push_back(stats);
        if (on_epoch) on_epoch(stats);

        if (result.best_epoch == 0 || stats.mean_loss < best_loss) {
            best_loss = stats.mean_loss;
            result.best_epoch = epoch;
            result.best_model = clone_model(model);
        }
        if (cfg.early_stop_train_accuracy > 0.0 &&
            stats.train_accuracy >= cfg.early_stop_train_accuracy)
            break;
    }
    return result;
}

}  // namespace temgnet

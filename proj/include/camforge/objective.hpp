#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "camforge/dataset.hpp"
#include "camforge/fusion.hpp"
#include "camforge/model.hpp"

namespace camforge::objective {

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Multi-label soft margin loss over foreground logits, softplus form:
// L = (1/(S-1)) sum_s [ y_s softplus(-z_s) + (1-y_s) softplus(z_s) ]
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline ad::Var multilabel_soft_margin(const ad::Var& z, const std::vector<double>& y) {
    const Tensor& zv = z->value;
    if (zv.rank() != 1 || zv.numel() != y.size() || y.empty())
        throw std::invalid_argument("soft_margin: logits " + zv.shape_str() + " vs " +
                                    std::to_string(y.size()) + " labels");
    for (double v : y)
        if (v != 0.0 && v != 1.0)
            throw std::invalid_argument("soft_margin: labels must be in {0,1}");
    const std::size_t s1 = y.size();
    double loss = 0.0;
    for (std::size_t s = 0; s < s1; ++s)
        loss += y[s] * softplus(-zv.data[s]) + (1.0 - y[s]) * softplus(zv.data[s]);
    loss /= static_cast<double>(s1);
    return ad::make_node(Tensor({1}, {loss}), {z}, [z, y, s1](ad::Node& n) {
        const double g = n.grad.data[0] / static_cast<double>(s1);
        for (std::size_t s = 0; s < s1; ++s)
            z->grad.data[s] += g * (sigmoid(z->value.data[s]) - y[s]);
    });
}

// direct evaluation of the loss definition; test oracle only
inline double multilabel_soft_margin_naive(const std::vector<double>& z,
                                           const std::vector<double>& y) {
    double loss = 0.0;
    for (std::size_t s = 0; s < y.size(); ++s) {
        const double sig = 1.0 / (1.0 + std::exp(-z[s]));
        loss -= y[s] * std::log(sig) + (1.0 - y[s]) * std::log(std::exp(-z[s]) / (1.0 + std::exp(-z[s])));
    }
    return loss / static_cast<double>(y.size());
}

struct AttentionProducts {
    ad::Var a_star;      // block-summed, stripped  (Eq. 5 operand)
    ad::Var a_bar_star;  // block-averaged, stripped (noise operand)
};

inline AttentionProducts attention_products(const model::ForwardArtifacts& art,
                                            bool stop_attention_grad = false) {
    auto ha = fusion::head_average(art.attention);
    auto a_star = fusion::strip_class_token(fusion::block_sum(ha));
    auto a_bar_star = fusion::strip_class_token(fusion::block_mean(ha));
    if (stop_attention_grad) {
        a_star = ad::constant(a_star->value);
        a_bar_star = ad::constant(a_bar_star->value);
    }
    return {a_star, a_bar_star};
}

// L_{M**}: refine, add attention noise, GAP, soft margin
inline ad::Var noisy_branch_loss(const model::ForwardArtifacts& art, const std::vector<double>& y,
                                 double k, bool stop_attention_grad = false) {
    auto prods = attention_products(art, stop_attention_grad);
    auto refined = fusion::refine_cam(prods.a_star, art.cam);
    auto noisy = fusion::inject_noise(prods.a_bar_star, refined, k);
    return multilabel_soft_margin(ad::gap(noisy), y);
}

// L_cls: CAM logits plus class-token head logits, summed before the loss
inline ad::Var cls_logits(const model::ModelState& st, const model::ForwardArtifacts& art) {
    const std::size_t d = st.config.embed_dim, s1 = st.config.num_fg_classes;
    auto cam_logits = ad::gap(art.cam);
    auto cls_row = ad::slice2d(art.tokens, 0, 1, 0, d);
    auto token_logits = ad::reshape(ad::linear(cls_row, st.at("head.weight"), st.at("head.bias")), {s1});
    return ad::add(cam_logits, token_logits);
}

inline ad::Var cls_loss(const model::ModelState& st, const model::ForwardArtifacts& art,
                        const std::vector<double>& y) {
    return multilabel_soft_margin(cls_logits(st, art), y);
}

struct LossReport {
    double l_cls = 0.0;
    double l_mss = 0.0;
    double total = 0.0;
    Tensor z;        // noisy-branch logits (empty when noise is off)
    Tensor z_cls;    // classification logits
    ad::Var total_var;
};

struct NoiseMode {
    bool enabled = true;
    double multiplier = 1.0;  // Table-5 style k
};

inline LossReport total_loss(const model::ModelState& st, const model::ForwardArtifacts& art,
                             const std::vector<double>& y, const NoiseMode& noise,
                             bool stop_attention_grad = false) {
    LossReport r;
    auto zc = cls_logits(st, art);
    auto lc = multilabel_soft_margin(zc, y);
    r.z_cls = zc->value;
    r.l_cls = lc->value.scalar();
    if (noise.enabled) {
        auto prods = attention_products(art, stop_attention_grad);
        auto refined = fusion::refine_cam(prods.a_star, art.cam);
        auto noisy = fusion::inject_noise(prods.a_bar_star, refined, noise.multiplier);
        auto z = ad::gap(noisy);
        auto lm = multilabel_soft_margin(z, y);
        r.z = z->value;
        r.l_mss = lm->value.scalar();
        r.total_var = ad::add(lc, lm);
    } else {
        r.total_var = lc;
    }
    r.total = r.total_var->value.scalar();
    return r;
}

// Adam moments with decoupled weight decay, beta = (0.9, 0.999), eps = 1e-8.
// Weight decay is scaled by lr so lr = 0 is a strict no-op.
class AdamW {
public:
    AdamW(double lr, double weight_decay) : lr_(lr), wd_(weight_decay) {}

    void step(model::ModelState& st) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (auto& [name, var] : st.params) {
            auto& m = moment(m_, name, var->value.shape);
            auto& v = moment(v_, name, var->value.shape);
            for (std::size_t i = 0; i < var->value.numel(); ++i) {
                const double g = var->grad.data[i];
                m.data[i] = beta1_ * m.data[i] + (1.0 - beta1_) * g;
                v.data[i] = beta2_ * v.data[i] + (1.0 - beta2_) * g * g;
                const double mhat = m.data[i] / bc1;
                const double vhat = v.data[i] / bc2;
                var->value.data[i] -=
                    lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * var->value.data[i]);
            }
        }
    }

private:
    Tensor& moment(std::map<std::string, Tensor>& store, const std::string& name,
                   const std::vector<std::size_t>& shape) {
        auto it = store.find(name);
        if (it == store.end()) it = store.emplace(name, Tensor(shape)).first;
        return it->second;
    }

    double lr_, wd_;
    static constexpr double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::map<std::string, Tensor> m_, v_;
    std::uint64_t t_ = 0;
};

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 8;
    double learning_rate = 1e-3;
    double weight_decay = 5e-4;
    NoiseMode noise;
    bool stop_attention_grad = false;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (epochs == 0 || batch_size == 0)
            throw std::invalid_argument("train: epochs and batch_size must be positive");
        if (!(learning_rate >= 0.0)) throw std::invalid_argument("train: learning rate must be >= 0");
        if (noise.multiplier < 0.0) throw std::invalid_argument("train: noise multiplier must be >= 0");
    }
};

struct StepRecord {
    std::size_t epoch = 0, step = 0;
    double l_cls = 0.0, l_mss = 0.0, total = 0.0;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<double> epoch_mean_total;
};

// Deterministic training loop: seeded shuffle, fixed accumulation order,
// one backward per batch.
inline TrainLog train(model::ModelState& st, const data::Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    if (ds.empty()) throw std::invalid_argument("train: empty dataset");
    for (const auto& s : ds)
        if (s.labels.size() != st.config.num_fg_classes)
            throw std::invalid_argument("train: dataset label width does not match model classes");

    TrainLog log;
    AdamW opt(cfg.learning_rate, cfg.weight_decay);
    Rng shuffle_rng(cfg.rng_seed);
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with our deterministic rng
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        double epoch_sum = 0.0;
        std::size_t epoch_steps = 0;
        for (std::size_t start = 0, step = 0; start < order.size(); start += cfg.batch_size, ++step) {
            const std::size_t end = std::min(start + cfg.batch_size, order.size());
            const std::size_t bs = end - start;

            // Batch elements run in parallel on shadow parameter copies; each
            // sample's gradient is computed on its own graph, so results do
            // not depend on thread count. Reduction below is in sample order.
            std::vector<std::map<std::string, Tensor>> grads(bs);
            std::vector<double> cls(bs, 0.0), mss(bs, 0.0), tot(bs, 0.0);
            parallel_for(bs, [&](std::size_t i) {
                const auto& s = ds[order[start + i]];
                model::ModelState shadow;
                shadow.config = st.config;
                for (const auto& [name, var] : st.params)
                    shadow.params.emplace(name, ad::param(var->value));
                auto art = model::forward(shadow, ad::constant(s.image));
                auto rep = total_loss(shadow, art, s.labels, cfg.noise, cfg.stop_attention_grad);
                ad::backward(rep.total_var);
                cls[i] = rep.l_cls;
                mss[i] = rep.l_mss;
                tot[i] = rep.total;
                for (auto& [name, var] : shadow.params) grads[i].emplace(name, std::move(var->grad));
            });

            const double inv = 1.0 / static_cast<double>(bs);
            double sum_cls = 0.0, sum_mss = 0.0, total = 0.0;
            for (std::size_t i = 0; i < bs; ++i) {
                sum_cls += cls[i] * inv;
                sum_mss += mss[i] * inv;
                total += tot[i] * inv;
            }
            if (!std::isfinite(total))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   " step " + std::to_string(step));
            for (auto& [name, var] : st.params) {
                std::fill(var->grad.data.begin(), var->grad.data.end(), 0.0);
                for (std::size_t i = 0; i < bs; ++i) {
                    const Tensor& g = grads[i].at(name);
                    for (std::size_t j = 0; j < g.numel(); ++j) var->grad.data[j] += inv * g.data[j];
                }
            }
            opt.step(st);
            log.steps.push_back({epoch, step, sum_cls, sum_mss, total});
            epoch_sum += total;
            ++epoch_steps;
        }
        log.epoch_mean_total.push_back(epoch_sum / static_cast<double>(epoch_steps));
    }
    return log;
}

}  // namespace camforge::objective

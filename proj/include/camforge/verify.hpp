#pragma once

#include <string>
#include <vector>

#include "camforge/objective.hpp"

namespace camforge::verify {

// Gradient checks behind the `gradcheck` command: the loss alone, the fused
// attention branch, and the full training loss through the model.

inline double check_soft_margin(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t s1 = 4;
    Tensor z({s1});
    std::vector<double> y(s1);
    for (auto& v : z.data) v = rng.uniform(-3.0, 3.0);
    for (auto& v : y) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    return ad::finite_diff_check(
        [&](const ad::Var& v) { return objective::multilabel_soft_margin(v, y); }, z, 1e-5);
}

// refine -> noise -> GAP -> loss, differentiated w.r.t. the CAM
inline double check_fused_branch(std::uint64_t seed, double k = 1.0) {
    Rng rng(seed);
    const std::size_t g = 3, n = g * g, s1 = 2;
    auto stochastic = [&](std::size_t rows, std::size_t cols) {
        Tensor t({rows, cols});
        for (std::size_t r = 0; r < rows; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < cols; ++c) sum += (t.at(r, c) = rng.uniform(0.05, 1.0));
            for (std::size_t c = 0; c < cols; ++c) t.at(r, c) /= sum;
        }
        return t;
    };
    const auto a_star = ad::constant(stochastic(n, n));
    const auto a_bar_star = ad::constant(stochastic(n, n));
    std::vector<double> y = {1.0, 0.0};
    Tensor cam({s1, g, g});
    for (auto& v : cam.data) v = rng.uniform(-1.0, 1.0);
    return ad::finite_diff_check(
        [&](const ad::Var& m) {
            auto refined = fusion::refine_cam(a_star, m);
            auto noisy = fusion::inject_noise(a_bar_star, refined, k);
            return objective::multilabel_soft_margin(ad::gap(noisy), y);
        },
        cam, 1e-5);
}

// full loss gradient w.r.t. every model parameter, checked one tensor at a
// time by rebuilding the state around the probed tensor
inline double check_model_loss(const model::ModelState& st, const Tensor& image,
                               const std::vector<double>& y, const objective::NoiseMode& noise,
                               double eps = 1e-5) {
    double max_err = 0.0;
    for (const auto& [name, var] : st.params) {
        auto f = [&, pname = name](const ad::Var& v) {
            model::ModelState probe;
            probe.config = st.config;
            probe.params = st.params;
            probe.params[pname] = v;
            auto art = model::forward(probe, ad::constant(image));
            return objective::total_loss(probe, art, y, noise).total_var;
        };
        max_err = std::max(max_err, ad::finite_diff_check(f, var->value, eps));
    }
    return max_err;
}

inline model::ModelConfig minimal_config(std::uint64_t seed = 7) {
    model::ModelConfig cfg;
    cfg.image_size = 16;
    cfg.patch_size = 8;
    cfg.num_blocks = 1;
    cfg.num_heads = 1;
    cfg.embed_dim = 8;
    cfg.cnn_channels = 4;
    cfg.num_fg_classes = 2;
    cfg.rng_seed = seed;
    return cfg;
}

}  // namespace camforge::verify

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "camforge/objective.hpp"
#include "camforge/verify.hpp"

using namespace camforge;
namespace fs = std::filesystem;

TEST_CASE("soft margin loss closed-form values") {
    // z = 0 -> ln 2 for any labels
    for (auto y : {std::vector<double>{1, 0, 1}, std::vector<double>{0, 0, 0}}) {
        auto l = objective::multilabel_soft_margin(ad::constant(Tensor({3})), y);
        CHECK(std::abs(l->value.scalar() - std::log(2.0)) < 1e-12);
    }

    // z=[2,-1], y=[1,0] -> -(1/2)[ln s(2) + ln s(1)] = 0.220095...
    auto l = objective::multilabel_soft_margin(ad::constant(Tensor({2}, {2, -1})), {1, 0});
    const double expect = -0.5 * (std::log(1.0 / (1.0 + std::exp(-2.0))) +
                                  std::log(1.0 / (1.0 + std::exp(-1.0))));
    CHECK(l->value.scalar() == doctest::Approx(expect).epsilon(1e-12));
    CHECK(l->value.scalar() == doctest::Approx(0.220095).epsilon(1e-5));

    // saturated positive logit contributes almost nothing, without overflow
    auto sat = objective::multilabel_soft_margin(ad::constant(Tensor({2}, {40.0, 0.0})), {1, 0});
    const double at_zero = 0.5 * std::log(2.0);
    CHECK(sat->value.scalar() - at_zero < 1e-17);
    CHECK(std::isfinite(sat->value.scalar()));

    CHECK_THROWS_AS(objective::multilabel_soft_margin(ad::constant(Tensor({2})), {0.5, 1.0}),
                    std::invalid_argument);
}

TEST_CASE("stable loss agrees with naive evaluation for |z| <= 30") {
    Rng rng(1);
    for (int it = 0; it < 500; ++it) {
        const std::size_t s1 = 1 + rng.below(5);
        std::vector<double> z(s1), y(s1);
        for (auto& v : z) v = rng.uniform(-30.0, 30.0);
        for (auto& v : y) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
        Tensor zt({s1});
        zt.data = z;
        const double stable = objective::multilabel_soft_margin(ad::constant(zt), y)->value.scalar();
        const double naive = objective::multilabel_soft_margin_naive(z, y);
        CHECK(std::abs(stable - naive) < 1e-9);
    }
}

TEST_CASE("noisy branch loss degenerate and composed cases") {
    auto st = model::init(verify::minimal_config(2));
    Rng rng(3);
    Tensor image({3, 16, 16});
    for (auto& v : image.data) v = rng.uniform();
    auto art = model::forward(st, ad::constant(image));
    const std::vector<double> y = {1.0, 0.0};

    // k = 0 zeroes the noisy CAM, so the loss is exactly ln 2
    auto zero = objective::noisy_branch_loss(art, y, 0.0);
    CHECK(std::abs(zero->value.scalar() - std::log(2.0)) < 1e-12);

    // step-by-step composition oracle at k = 1
    auto prods = objective::attention_products(art);
    auto refined = fusion::refine_cam(prods.a_star, art.cam);
    auto noisy = fusion::inject_noise(prods.a_bar_star, refined, 1.0);
    const double by_hand =
        objective::multilabel_soft_margin(ad::gap(noisy), y)->value.scalar();
    auto composed = objective::noisy_branch_loss(art, y, 1.0);
    CHECK(std::abs(composed->value.scalar() - by_hand) < 1e-12);
}

TEST_CASE("identity attention makes the noisy branch collapse onto gap(M)") {
    // degenerate fusion: A* = I and Abar* = I reduce L_{M**} to the loss of
    // the raw CAM logits
    Rng rng(4);
    Tensor cam({2, 2, 2});
    for (auto& v : cam.data) v = rng.uniform(-1, 1);
    const std::vector<double> y = {0.0, 1.0};
    auto id = ad::constant(Tensor::identity(4));
    auto refined = fusion::refine_cam(id, ad::constant(cam));
    auto noisy = fusion::inject_noise(id, refined, 1.0);
    const double fused = objective::multilabel_soft_margin(ad::gap(noisy), y)->value.scalar();
    const double direct =
        objective::multilabel_soft_margin(ad::gap(ad::constant(cam)), y)->value.scalar();
    CHECK(std::abs(fused - direct) < 1e-12);
}

TEST_CASE("cls loss additive structure") {
    auto st = model::init(verify::minimal_config(5));
    Rng rng(6);
    Tensor image({3, 16, 16});
    for (auto& v : image.data) v = rng.uniform();
    const std::vector<double> y = {1.0, 1.0};

    // zero class-token head reduces z_cls to gap(M)
    std::fill(st.at("head.weight")->value.data.begin(), st.at("head.weight")->value.data.end(), 0.0);
    std::fill(st.at("head.bias")->value.data.begin(), st.at("head.bias")->value.data.end(), 0.0);
    auto art = model::forward(st, ad::constant(image));
    const double l = objective::cls_loss(st, art, y)->value.scalar();
    const double cam_only =
        objective::multilabel_soft_margin(ad::gap(art.cam), y)->value.scalar();
    CHECK(std::abs(l - cam_only) < 1e-12);

    // hand-composed oracle with a nonzero head
    Rng rng2(7);
    for (auto& v : st.at("head.weight")->value.data) v = rng2.uniform(-0.5, 0.5);
    auto art2 = model::forward(st, ad::constant(image));
    const Tensor cam_logits = ad::gap(art2.cam)->value;
    const std::size_t d = st.config.embed_dim;
    std::vector<double> z(2);
    for (std::size_t s = 0; s < 2; ++s) {
        double acc = st.at("head.bias")->value.data[s];
        for (std::size_t c = 0; c < d; ++c)
            acc += art2.tokens->value.at(0, c) * st.at("head.weight")->value.at(c, s);
        z[s] = cam_logits.data[s] + acc;
    }
    const double expect = objective::multilabel_soft_margin_naive(z, y);
    CHECK(std::abs(objective::cls_loss(st, art2, y)->value.scalar() - expect) < 1e-9);
}

TEST_CASE("total loss is the exact sum of its terms") {
    auto st = model::init(verify::minimal_config(8));
    Rng rng(9);
    Tensor image({3, 16, 16});
    for (auto& v : image.data) v = rng.uniform();
    const std::vector<double> y = {1.0, 0.0};
    auto art = model::forward(st, ad::constant(image));
    auto rep = objective::total_loss(st, art, y, {true, 1.0});
    CHECK(rep.total == rep.l_cls + rep.l_mss);
    CHECK(std::isfinite(rep.total));

    // noise off drops the noisy term entirely
    auto art2 = model::forward(st, ad::constant(image));
    const auto count_before = fusion::noise_injection_count();
    auto off = objective::total_loss(st, art2, y, {false, 0.0});
    CHECK(fusion::noise_injection_count() == count_before);
    CHECK(off.l_mss == 0.0);
    CHECK(off.total == off.l_cls);
}

TEST_CASE("total loss gradient is the sum of branch gradients") {
    auto st = model::init(verify::minimal_config(10));
    Rng rng(11);
    Tensor image({3, 16, 16});
    for (auto& v : image.data) v = rng.uniform();
    const std::vector<double> y = {0.0, 1.0};

    auto grad_of = [&](auto&& loss_fn) {
        auto art = model::forward(st, ad::constant(image));
        ad::Var loss = loss_fn(art);
        ad::backward(loss);
        std::map<std::string, Tensor> out;
        for (auto& [name, var] : st.params) {
            out.emplace(name, var->grad);
            std::fill(var->grad.data.begin(), var->grad.data.end(), 0.0);
        }
        return out;
    };
    auto g_total = grad_of([&](const model::ForwardArtifacts& art) {
        return objective::total_loss(st, art, y, {true, 1.0}).total_var;
    });
    auto g_cls = grad_of([&](const model::ForwardArtifacts& art) {
        return objective::cls_loss(st, art, y);
    });
    auto g_mss = grad_of([&](const model::ForwardArtifacts& art) {
        return objective::noisy_branch_loss(art, y, 1.0);
    });
    for (const auto& [name, g] : g_total)
        for (std::size_t i = 0; i < g.numel(); ++i)
            CHECK(std::abs(g.data[i] - g_cls.at(name).data[i] - g_mss.at(name).data[i]) < 1e-12);
}

TEST_CASE("loss is invariant under a consistent patch permutation") {
    // permuting CAM cells and both attention operands identically must leave
    // L_{M**} unchanged: flattening order only has to match the model's
    Rng rng(12);
    const std::size_t g = 2, n = g * g;
    Tensor cam({2, g, g});
    for (auto& v : cam.data) v = rng.uniform(-1, 1);
    Tensor a_star({n, n}), a_bar_star({n, n});
    for (auto& v : a_star.data) v = rng.uniform(0, 1);
    for (auto& v : a_bar_star.data) v = rng.uniform(0, 1);
    const std::vector<double> y = {1.0, 0.0};

    auto loss_of = [&](const Tensor& as, const Tensor& abs_, const Tensor& m) {
        auto refined = fusion::refine_cam(ad::constant(as), ad::constant(m));
        auto noisy = fusion::inject_noise(ad::constant(abs_), refined, 1.0);
        return objective::multilabel_soft_margin(ad::gap(noisy), y)->value.scalar();
    };

    const std::size_t perm[4] = {2, 0, 3, 1};
    Tensor cam_p({2, g, g}), as_p({n, n}), abs_p({n, n});
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t i = 0; i < n; ++i) cam_p.data[s * n + i] = cam.data[s * n + perm[i]];
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            as_p.data[i * n + j] = a_star.data[perm[i] * n + perm[j]];
            abs_p.data[i * n + j] = a_bar_star.data[perm[i] * n + perm[j]];
        }
    CHECK(std::abs(loss_of(a_star, a_bar_star, cam) - loss_of(as_p, abs_p, cam_p)) < 1e-12);
}

TEST_CASE("training: lr = 0 is a strict no-op") {
    auto ds = data::generate(1, 6, 3, 16);
    auto st = model::init(verify::minimal_config(13));
    std::map<std::string, std::vector<double>> before;
    for (const auto& [name, var] : st.params) before[name] = var->value.data;

    objective::TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 3;
    cfg.learning_rate = 0.0;
    cfg.rng_seed = 1;
    objective::train(st, ds, cfg);
    for (const auto& [name, var] : st.params) CHECK(var->value.data == before.at(name));
}

TEST_CASE("training is bit-reproducible under a fixed seed") {
    auto ds = data::generate(2, 8, 3, 16);
    objective::TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.learning_rate = 1e-3;
    cfg.rng_seed = 5;

    auto run = [&] {
        auto st = model::init(verify::minimal_config(14));
        objective::train(st, ds, cfg);
        return st;
    };
    auto a = run();
    auto b = run();
    for (const auto& [name, var] : a.params) CHECK(var->value.data == b.at(name)->value.data);
}

TEST_CASE("training rejects an empty dataset") {
    auto st = model::init(verify::minimal_config(15));
    objective::TrainConfig cfg;
    CHECK_THROWS_AS(objective::train(st, {}, cfg), std::invalid_argument);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "camforge/rng.hpp"
#include "camforge/seeding.hpp"

using namespace camforge;

namespace {

// per-pixel brute-force mIoU oracle (no confusion matrix)
double miou_naive(const seeding::LabelMask& pred, const seeding::LabelMask& gt,
                  std::size_t num_classes) {
    double sum = 0.0;
    std::size_t considered = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        std::size_t inter = 0, uni = 0;
        for (std::size_t i = 0; i < pred.ids.size(); ++i) {
            const bool p = pred.ids[i] == c, g = gt.ids[i] == c;
            inter += p && g;
            uni += p || g;
        }
        if (uni == 0) continue;
        sum += static_cast<double>(inter) / static_cast<double>(uni);
        ++considered;
    }
    return considered ? sum / static_cast<double>(considered) : 0.0;
}

seeding::LabelMask random_mask(Rng& rng, std::size_t h, std::size_t w, std::size_t s) {
    seeding::LabelMask m(h, w);
    for (auto& id : m.ids) id = static_cast<std::uint8_t>(rng.below(s));
    return m;
}

}  // namespace

TEST_CASE("normalize_cam per-class affine map") {
    Tensor cam({1, 2, 2}, {0, 10, 5, 10});
    const Tensor norm = seeding::normalize_cam(cam);
    CHECK(norm.data == std::vector<double>{0, 1, 0.5, 1});

    // constant map normalizes to all zeros
    const Tensor flat = seeding::normalize_cam(Tensor::full({1, 2, 2}, 3.7));
    for (double v : flat.data) CHECK(v == 0.0);

    // non-constant maps span exactly [0,1]
    Rng rng(1);
    Tensor r({2, 3, 3});
    for (auto& v : r.data) v = rng.uniform(-5, 5);
    const Tensor n = seeding::normalize_cam(r);
    for (std::size_t s = 0; s < 2; ++s) {
        double lo = 1.0, hi = 0.0;
        for (std::size_t i = 0; i < 9; ++i) {
            lo = std::min(lo, n.data[s * 9 + i]);
            hi = std::max(hi, n.data[s * 9 + i]);
        }
        CHECK(lo == 0.0);
        CHECK(hi == 1.0);
    }
}

TEST_CASE("assign_labels threshold and argmax semantics") {
    // pixel scores per class, 1x1 grid
    Tensor two({2, 1, 1}, {0.7, 0.3});
    CHECK(seeding::assign_labels(two, 0.5).ids[0] == 1);  // class 1 wins

    Tensor low({2, 1, 1}, {0.4, 0.2});
    CHECK(seeding::assign_labels(low, 0.5).ids[0] == 0);  // below ht -> background

    // ht = 0: nothing is background ("below" is strict)
    Tensor zero({2, 1, 1}, {0.0, 0.0});
    CHECK(seeding::assign_labels(zero, 0.0).ids[0] == 1);

    // ties resolve to the lowest class id
    Tensor tie({3, 1, 1}, {0.6, 0.6, 0.6});
    CHECK(seeding::assign_labels(tie, 0.5).ids[0] == 1);

    CHECK_THROWS_AS(seeding::assign_labels(two, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(seeding::assign_labels(two, -0.1), std::invalid_argument);
}

TEST_CASE("argmax is invariant under per-pixel monotone transforms") {
    Rng rng(2);
    Tensor cam({3, 4, 4});
    for (auto& v : cam.data) v = rng.uniform(0, 1);
    Tensor warped = cam;
    for (auto& v : warped.data) v = v * v * v;  // strictly increasing on [0,1]
    const auto a = seeding::assign_labels(cam, 0.0);
    const auto b = seeding::assign_labels(warped, 0.0);
    CHECK(a.ids == b.ids);  // ht = 0 isolates the argmax half of the rule
}

TEST_CASE("miou hand-checked cases") {
    seeding::LabelMask pred(1, 2), gt(1, 2);
    pred.ids = {0, 1};
    gt.ids = {0, 0};
    const auto r = seeding::miou(pred, gt, 3);
    CHECK(r.per_class[0] == doctest::Approx(0.5));
    CHECK(r.per_class[1] == doctest::Approx(0.0));
    CHECK_FALSE(r.present[2]);  // class 2 absent from both -> excluded
    CHECK(r.miou == doctest::Approx(0.25));

    // pred == gt -> 1.0
    const auto perfect = seeding::miou(gt, gt, 3);
    CHECK(perfect.miou == 1.0);

    // only background present and matching -> mean over one class
    seeding::LabelMask bg(2, 2);
    const auto only_bg = seeding::miou(bg, bg, 5);
    CHECK(only_bg.miou == 1.0);

    seeding::LabelMask wrong(1, 3);
    CHECK_THROWS_AS(seeding::miou(pred, wrong, 3), std::invalid_argument);
}

TEST_CASE("miou equals brute-force oracle and is symmetric") {
    Rng rng(3);
    for (int it = 0; it < 100; ++it) {
        const std::size_t s = 2 + rng.below(4);  // S <= 5
        const std::size_t h = 1 + rng.below(32), w = 1 + rng.below(32);
        const auto a = random_mask(rng, h, w, s);
        const auto b = random_mask(rng, h, w, s);
        const double fast = seeding::miou(a, b, s).miou;
        CHECK(fast == miou_naive(a, b, s));          // integer-exact counts
        CHECK(fast == seeding::miou(b, a, s).miou);  // symmetry
    }
}

TEST_CASE("background pixel count is monotone in ht") {
    Rng rng(4);
    Tensor cam({3, 8, 8});
    for (auto& v : cam.data) v = rng.uniform(-2, 2);
    const Tensor norm = seeding::normalize_cam(cam);
    std::size_t prev = 0;
    for (double ht = 0.0; ht <= 1.0; ht += 0.05) {
        const auto mask = seeding::assign_labels(norm, ht);
        const auto bg = static_cast<std::size_t>(
            std::count(mask.ids.begin(), mask.ids.end(), std::uint8_t{0}));
        CHECK(bg >= prev);
        prev = bg;
    }
}

TEST_CASE("sweep matches the standalone per-threshold pipeline") {
    Rng rng(5);
    std::vector<Tensor> cams;
    std::vector<seeding::LabelMask> gts;
    const std::size_t s = 4;
    for (int i = 0; i < 5; ++i) {
        Tensor cam({s - 1, 6, 6});
        for (auto& v : cam.data) v = rng.uniform(-1, 1);
        cams.push_back(cam);
        gts.push_back(random_mask(rng, 6, 6, s));
    }
    const std::vector<double> thresholds = {0.0, 0.25, 0.25, 0.5, 1.0};
    const auto res = seeding::sweep(cams, gts, s, thresholds);
    CHECK(res.thresholds.size() == thresholds.size());
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
        seeding::ConfusionMatrix cm(s);
        for (std::size_t i = 0; i < cams.size(); ++i)
            cm.accumulate(seeding::assign_labels(seeding::normalize_cam(cams[i]), thresholds[t]),
                          gts[i]);
        CHECK(res.miou[t] == seeding::miou_from_confusion(cm).miou);
        CHECK(res.miou[t] >= 0.0);
        CHECK(res.miou[t] <= 1.0);
    }
    // duplicate thresholds give identical entries
    CHECK(res.miou[1] == res.miou[2]);

    CHECK_THROWS_AS(seeding::sweep(cams, gts, s, {}), std::invalid_argument);
}

TEST_CASE("ht = 1 keeps only per-class maxima of non-constant maps") {
    Rng rng(6);
    Tensor cam({2, 4, 4});
    for (auto& v : cam.data) v = rng.uniform(0, 1);
    const auto mask = seeding::assign_labels(seeding::normalize_cam(cam), 1.0);
    std::size_t fg = 0;
    for (auto id : mask.ids) fg += id != 0;
    CHECK(fg >= 1);        // each class has a cell at exactly 1.0
    CHECK(fg <= 2 * 16u);  // and nothing below the max survives
    const auto fully_bg = static_cast<std::size_t>(
        std::count(mask.ids.begin(), mask.ids.end(), std::uint8_t{0}));
    CHECK(fully_bg >= 16 - 2);
}
